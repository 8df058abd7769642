//! Subcommand bodies. Each reads its inputs, writes its outputs under the
//! given directory and returns the lines to print on stdout.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sixd_core::linalg::{norm, sub};
use sixd_core::{lift_to_6d, lift_to_6d_with_offset, symmetry_aware_error, RigidTransform, SymmetrySpec};
use sixd_eval::{
    bin_by_occlusion, predict_records, procedural_backgrounds, run_experiment, summarize, training_data, write_bins,
    write_json, write_report, ErrorSummary, EvalRecord, Experiment, ExperimentConfig, ReportTable, input_shape,
};
use sixd_icp::{estimate_covariances, gicp_refine, segment_to_cloud, write_ply, PointCloud};
use sixd_net::{fit, read_checkpoint, run_gradcheck, write_checkpoint, EpochRecord, GradCheckConfig, Network};
use sixd_synth::{center_depth_offset, generate_dataset, load_dataset, save_dataset, Dataset, Polyhedron, Sample};

use crate::error::CliError;
use crate::runs::{EvalRun, LiftRun, RefineRun, SplitSel, SynthRun, TrainRun};

pub type Output = Vec<String>;

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("key {key} is required")))
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T, CliError> {
    let bytes = fs::read(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}

fn load(p: &Path) -> Result<Dataset, CliError> {
    load_dataset(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}

fn sample_index(ds: &Dataset) -> HashMap<usize, &Sample> {
    ds.samples.iter().map(|s| (s.id, s)).collect()
}

fn polyhedra(ds: &Dataset) -> Result<Vec<Polyhedron>, CliError> {
    Ok(ds.objects.iter().map(|o| o.polyhedron()).collect::<Result<_, _>>()?)
}

pub fn synth(run: &SynthRun, out: &Path) -> Result<Output, CliError> {
    let backgrounds = if run.background_images.is_empty() {
        procedural_backgrounds(run.backgrounds, run.synth.image_size, run.synth.seed)
    } else {
        run.background_images
            .iter()
            .map(|p| {
                image::open(p)
                    .map(|i| i.to_rgb8())
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
            })
            .collect::<Result<_, _>>()?
    };
    let ds = generate_dataset(&run.objects.objects(), &backgrounds, &run.synth, run.threads)?;
    save_dataset(&ds, out)?;
    write_json(run, &out.join("run.json"))?;
    Ok(vec![format!(
        "wrote {} samples ({} train, {} val) to {}",
        ds.samples.len(),
        ds.train().count(),
        ds.val().count(),
        out.display()
    )])
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    run: &'a TrainRun,
    num_classes: usize,
    train_samples: usize,
    val_samples: usize,
    last_epoch: Option<EpochRecord>,
}

pub fn train(run: &TrainRun, out: &Path, progress: impl Fn(&EpochRecord)) -> Result<Output, CliError> {
    let ds = load(path(&run.dataset, "dataset")?)?;
    let data = training_data(&ds);
    let spec = sixd_net::ArchitectureSpec {
        num_classes: ds.num_classes(),
        ..run.arch
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (net, curves) = fit::<f32>(&spec, input_shape(&ds), &data, &run.train, progress)?;
    fs::create_dir_all(out)?;
    write_checkpoint(&net, BufWriter::new(File::create(out.join("checkpoint.bin"))?))?;
    curves.write_csv(BufWriter::new(File::create(out.join("curves.csv"))?))?;
    let last = curves.records.last().copied();
    write_json(
        &TrainSummary {
            run,
            num_classes: spec.num_classes,
            train_samples: data.train.len(),
            val_samples: data.val.len(),
            last_epoch: last,
        },
        &out.join("train.json"),
    )?;
    let mut lines = vec![format!("wrote checkpoint.bin, curves.csv and train.json to {}", out.display())];
    if let Some(r) = last {
        lines.push(format!(
            "epoch {}: val translation {:.3} px, val orientation {:.3} deg",
            r.epoch, r.val.trans_px, r.val.rot_deg
        ));
    }
    Ok(lines)
}

#[derive(Debug, Serialize)]
struct ClassSummary {
    class_id: usize,
    summary: ErrorSummary,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    split: SplitSel,
    overall: ErrorSummary,
    per_class: Vec<ClassSummary>,
    bins: sixd_eval::BinnedStats,
}

fn write_records_csv(records: &[EvalRecord], p: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(p)?;
    w.write_record([
        "id", "class_id", "occlusion_fraction", "translation_px", "orientation_deg", "pred_u", "pred_v", "pred_qw",
        "pred_qx", "pred_qy", "pred_qz", "target_u", "target_v", "target_qw", "target_qx", "target_qy", "target_qz",
    ])?;
    for r in records {
        let mut row = vec![
            r.id.to_string(),
            r.class_id.to_string(),
            r.occlusion_fraction.to_string(),
            r.trans_px.to_string(),
            r.rot_deg.to_string(),
        ];
        for p in [&r.predicted, &r.target] {
            let q = p.q;
            row.extend([p.u, p.v, q.w, q.x, q.y, q.z].iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(run: &EvalRun, out: &Path) -> Result<Output, CliError> {
    let ds = load(path(&run.dataset, "dataset")?)?;
    let ckpt = path(&run.checkpoint, "checkpoint")?;
    let file = File::open(ckpt).map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt.display())))?;
    let net: Network<f32> = read_checkpoint(BufReader::new(file))?;
    if net.input_shape != input_shape(&ds) {
        return Err(CliError::Runtime(format!(
            "checkpoint expects input {:?}, dataset has {:?}",
            net.input_shape,
            input_shape(&ds)
        )));
    }
    let samples: Vec<&Sample> = match run.split {
        SplitSel::Train => ds.train().collect(),
        SplitSel::Val => ds.val().collect(),
        SplitSel::All => ds.samples.iter().collect(),
    };
    if samples.is_empty() {
        return Err(CliError::Runtime("no samples in the selected split".into()));
    }
    let syms = ds.class_symmetries();
    let crop = ds.config.crop_size;
    let chunks: Vec<Vec<EvalRecord>> = pool(run.threads)?.install(|| {
        samples
            .par_chunks(16)
            .map(|c| predict_records(&net, c.iter().copied(), &syms, crop, |k| k))
            .collect::<Result<_, _>>()
    })?;
    let records: Vec<EvalRecord> = chunks.into_iter().flatten().collect();
    let overall = summarize(&records);
    let per_class = (0..ds.num_classes())
        .map(|c| {
            let rs: Vec<EvalRecord> = records.iter().filter(|r| r.class_id == c).cloned().collect();
            ClassSummary {
                class_id: c,
                summary: summarize(&rs),
            }
        })
        .collect();
    let bins = bin_by_occlusion(&records, run.bins)?;
    fs::create_dir_all(out)?;
    write_json(&records, &out.join("records.json"))?;
    write_records_csv(&records, &out.join("records.csv"))?;
    write_bins(&bins, &out.join("bins.csv"))?;
    write_json(
        &EvalSummary {
            split: run.split,
            overall,
            per_class,
            bins,
        },
        &out.join("summary.json"),
    )?;
    Ok(vec![format!(
        "{} samples: translation {:.3} px, orientation {:.3} deg",
        overall.count, overall.trans_px, overall.rot_deg
    )])
}

/// One prediction lifted to a camera-frame pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPose {
    pub id: usize,
    pub class_id: usize,
    pub pose: RigidTransform<f64>,
    pub ground_truth: RigidTransform<f64>,
    pub translation_error_m: f64,
    pub rotation_error_deg: f64,
}

#[derive(Debug, Serialize)]
struct Skipped {
    id: usize,
    reason: String,
}

fn pose_errors(pose: &RigidTransform<f64>, gt: &RigidTransform<f64>, sym: &SymmetrySpec<f64>) -> (f64, f64) {
    (
        norm(sub(pose.translation, gt.translation)),
        symmetry_aware_error(gt.rotation, pose.rotation, sym),
    )
}

fn crop_camera(ds: &Dataset, s: &Sample) -> (sixd_core::CameraIntrinsics<f64>, [f64; 2]) {
    let origin = [s.crop_origin[0] as f64, s.crop_origin[1] as f64];
    (
        ds.intrinsics.shifted(origin),
        [s.crop_center[0] - origin[0], s.crop_center[1] - origin[1]],
    )
}

pub fn lift(run: &LiftRun, out: &Path) -> Result<Output, CliError> {
    let ds = load(path(&run.dataset, "dataset")?)?;
    let records: Vec<EvalRecord> = read_json(path(&run.predictions, "predictions")?)?;
    let index = sample_index(&ds);
    let polys = polyhedra(&ds)?;
    let syms = ds.class_symmetries();
    let crop = ds.config.crop_size as f64;
    let mut lifted = Vec::new();
    let mut skipped = Vec::new();
    for r in &records {
        let s = index
            .get(&r.id)
            .ok_or_else(|| CliError::Runtime(format!("prediction for unknown sample {}", r.id)))?;
        let depth = s
            .depth_crop
            .as_ref()
            .ok_or_else(|| CliError::Runtime(format!("sample {} has no depth", r.id)))?;
        let (cam, center) = crop_camera(&ds, s);
        let attempt = lift_to_6d(&r.predicted, center, crop, depth, &cam).and_then(|p| {
            if run.model_offset {
                let offset = center_depth_offset(&polys[s.key.object], &p);
                lift_to_6d_with_offset(&r.predicted, center, crop, depth, &cam, offset)
            } else {
                Ok(p)
            }
        });
        match attempt {
            Ok(pose) => {
                let sym = syms.get(s.class_id).copied().unwrap_or_else(SymmetrySpec::none);
                let (t, rot) = pose_errors(&pose, &s.pose, &sym);
                lifted.push(LiftedPose {
                    id: r.id,
                    class_id: s.class_id,
                    pose,
                    ground_truth: s.pose,
                    translation_error_m: t,
                    rotation_error_deg: rot,
                });
            }
            Err(e) => skipped.push(Skipped {
                id: r.id,
                reason: e.to_string(),
            }),
        }
    }
    fs::create_dir_all(out)?;
    write_json(&lifted, &out.join("lifted.json"))?;
    write_json(&skipped, &out.join("lift_skipped.json"))?;
    let mean = |f: fn(&LiftedPose) -> f64| lifted.iter().map(f).sum::<f64>() / lifted.len().max(1) as f64;
    Ok(vec![format!(
        "lifted {} poses ({} skipped): mean translation error {:.4} m, orientation {:.3} deg",
        lifted.len(),
        skipped.len(),
        mean(|l| l.translation_error_m),
        mean(|l| l.rotation_error_deg)
    )])
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinedPose {
    pub id: usize,
    pub class_id: usize,
    pub initial: RigidTransform<f64>,
    pub refined: Option<RigidTransform<f64>>,
    pub ground_truth: RigidTransform<f64>,
    pub initial_translation_error_m: f64,
    pub initial_rotation_error_deg: f64,
    pub refined_translation_error_m: Option<f64>,
    pub refined_rotation_error_deg: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub correspondences: usize,
    pub error: Option<String>,
}

fn scene_cloud(ds: &Dataset, s: &Sample, run: &RefineRun) -> Result<PointCloud, CliError> {
    let depth = s
        .depth_crop
        .as_ref()
        .ok_or_else(|| CliError::Runtime(format!("sample {} has no depth", s.id)))?;
    let mask: Vec<bool> = depth.data.iter().map(|d| *d > 0.0 && d.is_finite()).collect();
    let (cam, _) = crop_camera(ds, s);
    let cloud = segment_to_cloud(&mask, (depth.width, depth.height), depth, &cam)?;
    Ok(estimate_covariances(&cloud, run.gicp.k_neighbors, run.gicp.plane_epsilon)?)
}

pub fn refine(run: &RefineRun, out: &Path) -> Result<Output, CliError> {
    let ds = load(path(&run.dataset, "dataset")?)?;
    let poses: Vec<LiftedPose> = read_json(path(&run.poses, "poses")?)?;
    let index = sample_index(&ds);
    let syms = ds.class_symmetries();
    let models: Vec<PointCloud> = polyhedra(&ds)?
        .iter()
        .map(|p| {
            let cloud = PointCloud::new(p.surface_points(run.model_grid_steps));
            estimate_covariances(&cloud, run.gicp.k_neighbors, run.gicp.plane_epsilon)
        })
        .collect::<Result<_, _>>()?;
    let samples: Vec<&Sample> = poses
        .iter()
        .map(|p| {
            index
                .get(&p.id)
                .copied()
                .ok_or_else(|| CliError::Runtime(format!("pose for unknown sample {}", p.id)))
        })
        .collect::<Result<_, _>>()?;
    fs::create_dir_all(out)?;
    if run.write_clouds {
        let dir = out.join("clouds");
        fs::create_dir_all(&dir)?;
        for (o, m) in models.iter().enumerate() {
            write_ply(m, BufWriter::new(File::create(dir.join(format!("model_{o}.ply")))?))?;
        }
        for s in &samples {
            let c = scene_cloud(&ds, s, run)?;
            write_ply(&c, BufWriter::new(File::create(dir.join(format!("scene_{}.ply", s.id)))?))?;
        }
    }
    let refined: Vec<RefinedPose> = pool(run.threads)?.install(|| {
        poses
            .par_iter()
            .zip(samples.par_iter())
            .map(|(p, s)| {
                let sym = syms.get(s.class_id).copied().unwrap_or_else(SymmetrySpec::none);
                let (t0, r0) = pose_errors(&p.pose, &s.pose, &sym);
                let mut entry = RefinedPose {
                    id: p.id,
                    class_id: s.class_id,
                    initial: p.pose,
                    refined: None,
                    ground_truth: s.pose,
                    initial_translation_error_m: t0,
                    initial_rotation_error_deg: r0,
                    refined_translation_error_m: None,
                    refined_rotation_error_deg: None,
                    iterations: 0,
                    converged: false,
                    correspondences: 0,
                    error: None,
                };
                // The partial scene view is aligned onto the full model, so
                // every scene point has a counterpart on the model surface.
                let result = scene_cloud(&ds, s, run).and_then(|scene| {
                    Ok(gicp_refine(&scene, &models[s.key.object], &p.pose.inverse(), &run.gicp)?)
                });
                match result {
                    Ok(r) => {
                        let pose = r.transform.inverse();
                        let (t, rot) = pose_errors(&pose, &s.pose, &sym);
                        entry.refined = Some(pose);
                        entry.refined_translation_error_m = Some(t);
                        entry.refined_rotation_error_deg = Some(rot);
                        entry.iterations = r.iterations;
                        entry.converged = r.converged;
                        entry.correspondences = r.correspondences;
                    }
                    Err(e) => entry.error = Some(e.to_string()),
                }
                entry
            })
            .collect()
    });
    write_json(&refined, &out.join("refined.json"))?;
    let ok: Vec<&RefinedPose> = refined.iter().filter(|r| r.refined.is_some()).collect();
    let n = ok.len().max(1) as f64;
    let mean = |f: fn(&RefinedPose) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    Ok(vec![
        format!("refined {} of {} poses", ok.len(), refined.len()),
        format!(
            "translation error {:.4} m -> {:.4} m, orientation {:.3} deg -> {:.3} deg",
            mean(|r| r.initial_translation_error_m),
            mean(|r| r.refined_translation_error_m.unwrap_or(f64::NAN)),
            mean(|r| r.initial_rotation_error_deg),
            mean(|r| r.refined_rotation_error_deg.unwrap_or(f64::NAN)),
        ),
    ])
}

/// Aligned plain-text rendering of a report table.
pub fn format_table(t: &ReportTable) -> Vec<String> {
    let header: Vec<String> = t.label_columns.iter().chain(&t.value_columns).cloned().collect();
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| r.labels.iter().cloned().chain(r.values.iter().map(|v| format!("{v:.3}"))).collect())
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    std::iter::once(header)
        .chain(rows)
        .map(|r| {
            r.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect()
}

pub fn experiment(
    which: Experiment,
    cfg: &ExperimentConfig,
    out: &Path,
    progress: &(dyn Fn(&str, &EpochRecord) + Sync),
) -> Result<Output, CliError> {
    let report = run_experiment(which, cfg, progress)?;
    let files = write_report(&report, out)?;
    let mut lines = format_table(&report.table);
    lines.push(format!("wrote {} to {}", files.join(", "), out.display()));
    Ok(lines)
}

pub fn gradcheck(cfg: &GradCheckConfig, out: Option<&Path>) -> Result<Output, CliError> {
    let report = run_gradcheck(cfg)?;
    let mut lines: Vec<String> = report
        .results
        .iter()
        .map(|r| format!("{:<32} max rel error {:.3e} ({} checked, {} skipped)", r.name, r.max_rel_error, r.checked, r.skipped))
        .collect();
    lines.push(format!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), report.tolerance));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&report, &dir.join("gradcheck.json"))?;
    }
    if !report.passed() {
        for l in &lines {
            eprintln!("{l}");
        }
        return Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.0e}",
            report.max_rel_error(),
            report.tolerance
        )));
    }
    Ok(lines)
}
