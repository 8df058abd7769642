//! The experiment harness: head comparison, architecture ablation,
//! symmetry learning curves and held-out-instance generalization.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sixd_core::SymmetrySpec;
use sixd_net::{fit, ArchitectureSpec, EpochRecord, HeadKind, Network, TrainConfig, TrainingCurves, Variant};
use sixd_synth::{
    block_family, generate_dataset, symmetric_object, toy_objects, Dataset, ObjectSpec, Sample, SynthConfig,
};

use crate::data::{input_shape, procedural_backgrounds, train_sample};
use crate::error::EvalError;
use crate::evaluate::predict_records;
use crate::metrics::{bin_by_occlusion, summarize, BinnedStats, EvalRecord, DEFAULT_BINS};
use crate::report::{write_json, ReportTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BlockCompare,
    Ablation,
    SymmetryCurves,
    Generalization,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::BlockCompare,
        Experiment::Ablation,
        Experiment::SymmetryCurves,
        Experiment::Generalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::BlockCompare => "block_compare",
            Experiment::Ablation => "ablation",
            Experiment::SymmetryCurves => "symmetry_curves",
            Experiment::Generalization => "generalization",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| EvalError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// `num_classes` and, where the experiment dictates it, `variant` and
    /// `head` are overridden per run.
    pub arch: ArchitectureSpec,
    pub train: TrainConfig,
    /// Number of procedural backgrounds to composite onto.
    pub backgrounds: usize,
    pub bins: usize,
    /// Worker threads for dataset generation and independent training runs.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            arch: ArchitectureSpec::default(),
            train: TrainConfig::default(),
            backgrounds: 4,
            bins: DEFAULT_BINS,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.synth.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.backgrounds == 0 {
            return Err(EvalError::InvalidConfig("backgrounds must be positive".into()));
        }
        if self.bins == 0 {
            return Err(EvalError::InvalidConfig("bins must be positive".into()));
        }
        Ok(())
    }
}

/// Named training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub name: String,
    pub curves: TrainingCurves,
}

/// Named occlusion bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSet {
    pub name: String,
    pub stats: BinnedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub table: ReportTable,
    /// Published magnitudes in the same layout, for orientation only.
    pub reference: Option<ReportTable>,
    pub curves: Vec<CurveSet>,
    pub bins: Vec<BinSet>,
    pub config: ExperimentConfig,
}

/// Per-epoch progress callback: run name and epoch record.
pub type Progress<'a> = &'a (dyn Fn(&str, &EpochRecord) + Sync);

fn dataset(objects: &[ObjectSpec], synth: &SynthConfig, cfg: &ExperimentConfig) -> Result<Dataset, EvalError> {
    let bgs = procedural_backgrounds(cfg.backgrounds, synth.image_size, synth.seed);
    Ok(generate_dataset(objects, &bgs, synth, cfg.threads)?)
}

fn without_occlusion(synth: &SynthConfig) -> SynthConfig {
    SynthConfig {
        max_occlusion_fraction: 0.0,
        ..synth.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn train_on(
    name: &str,
    spec: &ArchitectureSpec,
    samples: &[&Sample],
    val: &[&Sample],
    ds: &Dataset,
    cfg: &ExperimentConfig,
    class_map: &(dyn Fn(usize) -> usize + Sync),
    progress: Progress,
) -> Result<(Network<f32>, TrainingCurves), EvalError> {
    let map = |s: &Sample| {
        let mut t = train_sample(s);
        t.class_id = class_map(s.class_id);
        t
    };
    let syms = ds.class_symmetries();
    let mut symmetries = vec![SymmetrySpec::none(); spec.num_classes];
    for (c, sym) in syms.iter().enumerate() {
        if let Some(slot) = symmetries.get_mut(class_map(c)) {
            *slot = sym.cast();
        }
    }
    let data = sixd_net::TrainingData {
        train: samples.iter().map(|s| map(s)).collect(),
        val: val.iter().map(|s| map(s)).collect(),
        symmetries,
        crop_size: ds.config.crop_size,
    };
    let (net, curves) = fit(spec, input_shape(ds), &data, &cfg.train, |r| progress(name, r))?;
    Ok((net, curves))
}

fn records(
    net: &Network<f32>,
    samples: &[&Sample],
    ds: &Dataset,
    class_map: impl Fn(usize) -> usize,
) -> Result<Vec<EvalRecord>, EvalError> {
    predict_records(net, samples.iter().copied(), &ds.class_symmetries(), ds.config.crop_size, class_map)
}

fn split(ds: &Dataset) -> (Vec<&Sample>, Vec<&Sample>) {
    (ds.train().collect(), ds.val().collect())
}

/// Single- vs. multi-block heads trained on the same occluded data and
/// seeds, evaluated on train and validation splits with and without
/// occluders.
pub fn block_compare(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let objects = toy_objects();
    let occluded = dataset(&objects, &cfg.synth, cfg)?;
    let clean = dataset(&objects, &without_occlusion(&cfg.synth), cfg)?;
    let (train_o, val_o) = split(&occluded);
    let (train_c, val_c) = split(&clean);
    let heads = [(HeadKind::SingleBlock, "single"), (HeadKind::MultiBlock, "multi")];
    let runs: Vec<_> = pool(cfg)?.install(|| {
        heads
            .par_iter()
            .map(|&(head, name)| {
                let spec = ArchitectureSpec {
                    head,
                    num_classes: occluded.num_classes(),
                    ..cfg.arch
                };
                train_on(name, &spec, &train_o, &val_o, &occluded, cfg, &|c| c, progress)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = ReportTable::new(&["split", "metric", "head"], &["no_occlusion", "occlusion"]);
    let mut bins = Vec::new();
    let mut evaluated = Vec::new();
    for ((_, name), (net, _)) in heads.iter().zip(&runs) {
        let e = [
            records(net, &train_c, &clean, |c| c)?,
            records(net, &train_o, &occluded, |c| c)?,
            records(net, &val_c, &clean, |c| c)?,
            records(net, &val_o, &occluded, |c| c)?,
        ];
        bins.push(BinSet {
            name: format!("{name}_val"),
            stats: bin_by_occlusion(&e[3], cfg.bins)?,
        });
        evaluated.push((*name, e.map(|r| summarize(&r))));
    }
    for (si, split_name) in ["train", "val"].into_iter().enumerate() {
        for metric in ["translation_px", "orientation_deg"] {
            for (name, s) in &evaluated {
                let pick = |k: usize| {
                    if metric == "translation_px" {
                        s[k].trans_px
                    } else {
                        s[k].rot_deg
                    }
                };
                table.push(&[split_name, metric, name], vec![pick(2 * si), pick(2 * si + 1)]);
            }
        }
    }
    let mut reference = ReportTable::new(&["split", "metric", "head"], &["no_occlusion", "occlusion"]);
    for (labels, v) in [
        (["train", "translation_px", "single"], [9.57, 11.21]),
        (["train", "translation_px", "multi"], [9.28, 12.06]),
        (["train", "orientation_deg", "single"], [5.92, 6.44]),
        (["train", "orientation_deg", "multi"], [5.78, 6.56]),
        (["val", "translation_px", "single"], [10.52, 12.14]),
        (["val", "translation_px", "multi"], [9.68, 12.91]),
        (["val", "orientation_deg", "single"], [7.9, 9.76]),
        (["val", "orientation_deg", "multi"], [7.4, 9.64]),
    ] {
        reference.push(&labels, v.to_vec());
    }
    Ok(ExperimentReport {
        experiment: Experiment::BlockCompare,
        table,
        reference: Some(reference),
        curves: heads
            .iter()
            .zip(runs)
            .map(|((_, n), (_, c))| CurveSet {
                name: n.to_string(),
                curves: c,
            })
            .collect(),
        bins,
        config: cfg.clone(),
    })
}

/// Orientation-error columns of the ablation grid.
pub const ABLATION_COLUMNS: [&str; 4] = ["train_translation_px", "val_translation_px", "train_orientation_deg", "val_orientation_deg"];

/// All six architecture variants on the same data. `fc_per_class` trains
/// one single-class model per object and pools their errors.
pub fn ablation(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let ds = dataset(&toy_objects(), &cfg.synth, cfg)?;
    let (train, val) = split(&ds);
    let n = ds.num_classes();
    // (variant, class restriction); None trains on every class
    let mut jobs: Vec<(Variant, Option<usize>)> = Vec::new();
    for v in Variant::ALL {
        if v == Variant::FcPerClass {
            jobs.extend((0..n).map(|c| (v, Some(c))));
        } else {
            jobs.push((v, None));
        }
    }
    let results: Vec<(Vec<EvalRecord>, Vec<EvalRecord>, TrainingCurves)> = pool(cfg)?.install(|| {
        jobs.par_iter()
            .map(|&(variant, class)| {
                let keep = |s: &&Sample| class.is_none() || class == Some(s.class_id);
                let tr: Vec<&Sample> = train.iter().copied().filter(keep).collect();
                let va: Vec<&Sample> = val.iter().copied().filter(keep).collect();
                let spec = ArchitectureSpec {
                    variant,
                    head: if class.is_some() { HeadKind::SingleBlock } else { cfg.arch.head },
                    num_classes: if class.is_some() { 1 } else { n },
                    ..cfg.arch
                };
                let map = move |c: usize| if class.is_some() { 0 } else { c };
                let name = match class {
                    Some(c) => format!("{}_class{c}", variant.name()),
                    None => variant.name().to_string(),
                };
                let (net, curves) = train_on(&name, &spec, &tr, &va, &ds, cfg, &map, progress)?;
                Ok((records(&net, &tr, &ds, map)?, records(&net, &va, &ds, map)?, curves))
            })
            .collect::<Result<Vec<_>, EvalError>>()
    })?;
    let mut table = ReportTable::new(&["variant"], &ABLATION_COLUMNS);
    let mut curves = Vec::new();
    for v in Variant::ALL {
        let mut tr = Vec::new();
        let mut va = Vec::new();
        for ((variant, class), (a, b, c)) in jobs.iter().zip(&results) {
            if *variant == v {
                tr.extend(a.iter().cloned());
                va.extend(b.iter().cloned());
                curves.push(CurveSet {
                    name: match class {
                        Some(k) => format!("{}_class{k}", v.name()),
                        None => v.name().to_string(),
                    },
                    curves: c.clone(),
                });
            }
        }
        tr.sort_by_key(|r| r.id);
        va.sort_by_key(|r| r.id);
        let (st, sv) = (summarize(&tr), summarize(&va));
        table.push(&[v.name()], vec![st.trans_px, sv.trans_px, st.rot_deg, sv.rot_deg]);
    }
    let mut reference = ReportTable::new(&["variant"], &ABLATION_COLUMNS);
    for (v, vals) in [
        (Variant::FcPerClass, [38.9, 44.7, 37.2, 47.2]),
        (Variant::FcMultiClass, [46.4, 54.4, 42.7, 51.9]),
        (Variant::Conv1S4, [36.8, 37.4, 36.3, 44.5]),
        (Variant::Conv1S8, [36.4, 37.1, 25.8, 34.2]),
        (Variant::Conv2S2, [32.3, 33.9, 11.3, 17.0]),
        (Variant::Conv3S2, [10.2, 13.5, 4.64, 10.8]),
    ] {
        reference.push(&[v.name()], vals.to_vec());
    }
    Ok(ExperimentReport {
        experiment: Experiment::Ablation,
        table,
        reference: Some(reference),
        curves,
        bins: Vec::new(),
        config: cfg.clone(),
    })
}

/// First epoch (1-based) whose value is at most `factor` times the final
/// value.
pub fn epochs_to_threshold(values: &[f64], factor: f64) -> Option<usize> {
    let last = *values.last()?;
    values.iter().position(|v| *v <= factor * last).map(|i| i + 1)
}

pub const THRESHOLD_FACTOR: f64 = 1.1;

/// The symmetric object trained twice on identical images and seeds: once
/// with symmetry-canonicalized targets, once with raw targets.
pub fn symmetry_curves(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let objects = [symmetric_object(0)];
    let variants = [("canonical", true), ("raw", false)];
    let runs: Vec<(Dataset, TrainingCurves)> = pool(cfg)?.install(|| {
        variants
            .par_iter()
            .map(|&(name, canonical)| {
                let synth = SynthConfig {
                    canonicalize_targets: canonical,
                    ..cfg.synth.clone()
                };
                let ds = dataset(&objects, &synth, cfg)?;
                let (train, val) = split(&ds);
                let spec = ArchitectureSpec {
                    num_classes: 1,
                    ..cfg.arch
                };
                let (_, curves) = train_on(name, &spec, &train, &val, &ds, cfg, &|c| c, progress)?;
                Ok((ds, curves))
            })
            .collect::<Result<Vec<_>, EvalError>>()
    })?;
    let mut table = ReportTable::new(
        &["targets"],
        &[
            "epochs_to_threshold",
            "epochs_to_shared_threshold",
            "final_val_quat_loss",
            "final_val_orientation_deg",
            "final_val_translation_px",
        ],
    );
    // A common bar for both runs: THRESHOLD_FACTOR times the lower final loss.
    let best_final = runs
        .iter()
        .filter_map(|(_, c)| c.val_quat_loss().last().copied())
        .fold(f64::INFINITY, f64::min);
    for ((name, _), (_, curves)) in variants.iter().zip(&runs) {
        let q = curves.val_quat_loss();
        let last = curves.records.last().ok_or(EvalError::Empty("no epochs"))?;
        let own = epochs_to_threshold(&q, THRESHOLD_FACTOR).unwrap_or(0);
        let shared = q
            .iter()
            .position(|v| *v <= THRESHOLD_FACTOR * best_final)
            .map_or(f64::NAN, |i| (i + 1) as f64);
        table.push(
            &[name],
            vec![own as f64, shared, last.val.quat_loss, last.val.rot_deg, last.val.trans_px],
        );
    }
    let mut reference = ReportTable::new(&["targets"], &["epochs_to_threshold"]);
    reference.push(&["canonical"], vec![100.0]);
    reference.push(&["raw"], vec![300.0]);
    Ok(ExperimentReport {
        experiment: Experiment::SymmetryCurves,
        table,
        reference: Some(reference),
        curves: variants
            .iter()
            .zip(runs)
            .map(|((n, _), (_, c))| CurveSet {
                name: n.to_string(),
                curves: c,
            })
            .collect(),
        bins: Vec::new(),
        config: cfg.clone(),
    })
}

/// Trains on every instance of the block family but the last and evaluates
/// on all samples of the held-out instance, with and without occluders.
pub fn generalization(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let mut family = block_family();
    let held_out = family.pop().ok_or(EvalError::Empty("empty object family"))?;
    let ds = dataset(&family, &cfg.synth, cfg)?;
    let (train, val) = split(&ds);
    let spec = ArchitectureSpec {
        num_classes: ds.num_classes(),
        ..cfg.arch
    };
    let (net, curves) = train_on("generalization", &spec, &train, &val, &ds, cfg, &|c| c, progress)?;
    let test_o = dataset(std::slice::from_ref(&held_out), &cfg.synth, cfg)?;
    let test_c = dataset(std::slice::from_ref(&held_out), &without_occlusion(&cfg.synth), cfg)?;
    let all_o: Vec<&Sample> = test_o.samples.iter().collect();
    let all_c: Vec<&Sample> = test_c.samples.iter().collect();
    let rec_o = records(&net, &all_o, &test_o, |c| c)?;
    let rec_c = records(&net, &all_c, &test_c, |c| c)?;
    let mut table = ReportTable::new(&["condition"], &["translation_px", "orientation_deg"]);
    for (name, r) in [("no_occlusion", &rec_c), ("occlusion", &rec_o)] {
        let s = summarize(r);
        table.push(&[name], vec![s.trans_px, s.rot_deg]);
    }
    let mut reference = ReportTable::new(&["condition"], &["translation_px", "orientation_deg"]);
    reference.push(&["no_occlusion"], vec![36.34, 33.60]);
    reference.push(&["occlusion"], vec![39.52, 38.21]);
    Ok(ExperimentReport {
        experiment: Experiment::Generalization,
        table,
        reference: Some(reference),
        curves: vec![CurveSet {
            name: "generalization".into(),
            curves,
        }],
        bins: vec![BinSet {
            name: "held_out".into(),
            stats: bin_by_occlusion(&rec_o, cfg.bins)?,
        }],
        config: cfg.clone(),
    })
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("thread pool: {e}")))
}

pub fn run_experiment(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    progress: Progress,
) -> Result<ExperimentReport, EvalError> {
    match experiment {
        Experiment::BlockCompare => block_compare(cfg, progress),
        Experiment::Ablation => ablation(cfg, progress),
        Experiment::SymmetryCurves => symmetry_curves(cfg, progress),
        Experiment::Generalization => generalization(cfg, progress),
    }
}

/// Writes `<name>.csv`, `<name>.json`, one curve CSV per training run and
/// one CSV per occlusion binning into `dir`. Returns the file names.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<String>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let name = report.experiment.name();
    let mut files = vec![format!("{name}.csv"), format!("{name}.json")];
    report.table.write_csv(&dir.join(&files[0]))?;
    write_json(report, &dir.join(&files[1]))?;
    if let Some(reference) = &report.reference {
        let f = format!("{name}_reference.csv");
        reference.write_csv(&dir.join(&f))?;
        files.push(f);
    }
    for c in &report.curves {
        let f = format!("{name}_curves_{}.csv", c.name);
        c.curves.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(&f))?))?;
        files.push(f);
    }
    if report.experiment == Experiment::SymmetryCurves && report.curves.len() == 2 {
        let f = format!("{name}_val_quat_loss.csv");
        let mut w = csv::Writer::from_path(dir.join(&f))?;
        w.write_record(["epoch", &report.curves[0].name, &report.curves[1].name])?;
        let (a, b) = (report.curves[0].curves.val_quat_loss(), report.curves[1].curves.val_quat_loss());
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            w.write_record([(i + 1).to_string(), x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        files.push(f);
    }
    for b in &report.bins {
        let f = format!("{name}_bins_{}.csv", b.name);
        write_bins(&b.stats, &dir.join(&f))?;
        files.push(f);
    }
    Ok(files)
}

pub fn write_bins(stats: &BinnedStats, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_low", "bin_high", "count", "mean_translation_px", "mean_orientation_deg"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in 0..stats.counts.len() {
        w.write_record([
            stats.edges[i].to_string(),
            stats.edges[i + 1].to_string(),
            stats.counts[i].to_string(),
            opt(stats.mean_trans_px[i]),
            opt(stats.mean_rot_deg[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
