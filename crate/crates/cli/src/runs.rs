//! Typed configs of the subcommands.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sixd_eval::{ExperimentConfig, DEFAULT_BINS};
use sixd_icp::GicpConfig;
use sixd_net::{ArchitectureSpec, GradCheckConfig, TrainConfig};
use sixd_synth::{block_family, symmetric_object, toy_objects, ObjectSpec, SynthConfig};

use crate::error::CliError;

fn invalid(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<(), CliError> {
    match path {
        Some(_) => Ok(()),
        None => Err(CliError::Config(format!("key {key} is required"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSet {
    /// The three asymmetric toy objects.
    Toy,
    /// The rotation-symmetric object alone.
    Symmetric,
    /// Four blocks of one family sharing a class.
    BlockFamily,
}

impl ObjectSet {
    pub fn objects(self) -> Vec<ObjectSpec> {
        match self {
            ObjectSet::Toy => toy_objects(),
            ObjectSet::Symmetric => vec![symmetric_object(0)],
            ObjectSet::BlockFamily => block_family(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub synth: SynthConfig,
    pub objects: ObjectSet,
    /// Procedural backgrounds to generate when `background_images` is empty.
    pub backgrounds: usize,
    /// PNG or JPEG files to composite onto instead of procedural ones.
    pub background_images: Vec<PathBuf>,
    pub threads: usize,
}

impl Default for SynthRun {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            objects: ObjectSet::Toy,
            backgrounds: 4,
            background_images: Vec::new(),
            threads: 1,
        }
    }
}

impl SynthRun {
    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(invalid)?;
        if self.backgrounds == 0 && self.background_images.is_empty() {
            return Err(invalid("key backgrounds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    /// Directory written by `synth`.
    pub dataset: Option<PathBuf>,
    /// `num_classes` is taken from the dataset.
    pub arch: ArchitectureSpec,
    pub train: TrainConfig,
}

impl TrainRun {
    pub fn validate(&self) -> Result<(), CliError> {
        require(&self.dataset, "dataset")?;
        self.train.validate().map_err(invalid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSel {
    Train,
    Val,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub dataset: Option<PathBuf>,
    /// Checkpoint written by `train`.
    pub checkpoint: Option<PathBuf>,
    pub split: SplitSel,
    pub bins: usize,
    pub threads: usize,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoint: None,
            split: SplitSel::Val,
            bins: DEFAULT_BINS,
            threads: 1,
        }
    }
}

impl EvalRun {
    pub fn validate(&self) -> Result<(), CliError> {
        require(&self.dataset, "dataset")?;
        require(&self.checkpoint, "checkpoint")?;
        if self.bins == 0 {
            return Err(invalid("key bins must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftRun {
    pub dataset: Option<PathBuf>,
    /// `records.json` written by `eval`.
    pub predictions: Option<PathBuf>,
    /// Add the model's surface-to-origin depth offset under the predicted
    /// orientation.
    pub model_offset: bool,
}

impl Default for LiftRun {
    fn default() -> Self {
        Self {
            dataset: None,
            predictions: None,
            model_offset: true,
        }
    }
}

impl LiftRun {
    pub fn validate(&self) -> Result<(), CliError> {
        require(&self.dataset, "dataset")?;
        require(&self.predictions, "predictions")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineRun {
    pub dataset: Option<PathBuf>,
    /// `lifted.json` written by `lift`.
    pub poses: Option<PathBuf>,
    pub gicp: GicpConfig,
    /// Barycentric grid steps per model face triangle when sampling the
    /// object surface.
    pub model_grid_steps: usize,
    /// Also write the model and scene clouds as PLY files.
    pub write_clouds: bool,
    pub threads: usize,
}

impl Default for RefineRun {
    fn default() -> Self {
        Self {
            dataset: None,
            poses: None,
            gicp: GicpConfig {
                max_correspondence_distance: Some(0.02),
                ..GicpConfig::default()
            },
            model_grid_steps: 16,
            write_clouds: false,
            threads: 1,
        }
    }
}

impl RefineRun {
    pub fn validate(&self) -> Result<(), CliError> {
        require(&self.dataset, "dataset")?;
        require(&self.poses, "poses")?;
        self.gicp.validate().map_err(invalid)?;
        if self.model_grid_steps < 2 {
            return Err(invalid("key model_grid_steps must be at least 2"));
        }
        Ok(())
    }
}

pub fn validate_experiment(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.synth.validate().map_err(invalid)?;
    cfg.arch.validate().map_err(invalid)?;
    cfg.train.validate().map_err(invalid)?;
    cfg.validate().map_err(invalid)
}

pub fn validate_gradcheck(cfg: &GradCheckConfig) -> Result<(), CliError> {
    if !(cfg.eps > 0.0 && cfg.tolerance > 0.0) {
        return Err(invalid("keys eps and tolerance must be positive"));
    }
    Ok(())
}
