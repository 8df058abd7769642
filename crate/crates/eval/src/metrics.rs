use serde::{Deserialize, Serialize};
use sixd_core::{symmetry_aware_error, Pose5D, RigidTransform, SymmetrySpec};
use sixd_synth::MAX_OCCLUSION;

use crate::error::EvalError;

/// `|pred.uv - target.uv| * crop_size / 2`.
pub fn translation_error_px(pred: &Pose5D<f64>, target: &Pose5D<f64>, crop_size: usize) -> f64 {
    (pred.u - target.u).hypot(pred.v - target.v) * crop_size as f64 / 2.0
}

pub fn orientation_error_deg(pred: &Pose5D<f64>, target: &Pose5D<f64>, spec: &SymmetrySpec<f64>) -> f64 {
    symmetry_aware_error(target.q, pred.q, spec)
}

/// One evaluated prediction together with its errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: usize,
    pub class_id: usize,
    pub predicted: Pose5D<f64>,
    pub target: Pose5D<f64>,
    pub occlusion_fraction: f64,
    pub trans_px: f64,
    pub rot_deg: f64,
    pub refined: Option<RigidTransform<f64>>,
    pub ground_truth: Option<RigidTransform<f64>>,
}

impl EvalRecord {
    pub fn new(
        id: usize,
        class_id: usize,
        predicted: Pose5D<f64>,
        target: Pose5D<f64>,
        occlusion_fraction: f64,
        symmetry: &SymmetrySpec<f64>,
        crop_size: usize,
    ) -> Self {
        Self {
            id,
            class_id,
            trans_px: translation_error_px(&predicted, &target, crop_size),
            rot_deg: orientation_error_deg(&predicted, &target, symmetry),
            predicted,
            target,
            occlusion_fraction,
            refined: None,
            ground_truth: None,
        }
    }
}

/// Mean errors over a set of records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub trans_px: f64,
    pub rot_deg: f64,
}

pub fn summarize(records: &[EvalRecord]) -> ErrorSummary {
    let n = records.len();
    let mean = |f: fn(&EvalRecord) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    ErrorSummary {
        count: n,
        trans_px: mean(|r| r.trans_px),
        rot_deg: mean(|r| r.rot_deg),
    }
}

/// Errors grouped into equal-width occlusion bins over `[0, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedStats {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub mean_trans_px: Vec<Option<f64>>,
    pub mean_rot_deg: Vec<Option<f64>>,
}

pub const DEFAULT_BINS: usize = 5;

/// Bin of `fraction` among `bin_count` equal bins on `[0, 0.5]`; the upper
/// edge belongs to the last bin.
pub fn occlusion_bin(fraction: f64, bin_count: usize) -> usize {
    (1..bin_count)
        .take_while(|&i| fraction >= bin_edge(i, bin_count))
        .count()
}

/// Lower edge of bin `i`; `bin_edge(bin_count, bin_count)` is the upper
/// limit.
pub fn bin_edge(i: usize, bin_count: usize) -> f64 {
    MAX_OCCLUSION * i as f64 / bin_count as f64
}

pub fn bin_by_occlusion(records: &[EvalRecord], bin_count: usize) -> Result<BinnedStats, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty("no records to bin"));
    }
    if bin_count == 0 {
        return Err(EvalError::InvalidConfig("bin_count must be positive".into()));
    }
    if let Some(r) = records
        .iter()
        .find(|r| !(0.0..=MAX_OCCLUSION).contains(&r.occlusion_fraction))
    {
        return Err(EvalError::InvalidConfig(format!(
            "record {} has occlusion {} outside [0, {MAX_OCCLUSION}]",
            r.id, r.occlusion_fraction
        )));
    }
    let mut counts = vec![0usize; bin_count];
    let mut trans = vec![0.0f64; bin_count];
    let mut rot = vec![0.0f64; bin_count];
    for r in records {
        let b = occlusion_bin(r.occlusion_fraction, bin_count);
        counts[b] += 1;
        trans[b] += r.trans_px;
        rot[b] += r.rot_deg;
    }
    let mean = |s: &[f64]| -> Vec<Option<f64>> {
        s.iter()
            .zip(&counts)
            .map(|(v, &c)| (c > 0).then(|| v / c as f64))
            .collect()
    };
    Ok(BinnedStats {
        edges: (0..=bin_count).map(|i| bin_edge(i, bin_count)).collect(),
        mean_trans_px: mean(&trans),
        mean_rot_deg: mean(&rot),
        counts,
    })
}
