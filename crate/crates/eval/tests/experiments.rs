use sixd_eval::{
    epochs_to_threshold, run_experiment, write_report, EvalError, Experiment, ExperimentConfig, ExperimentReport,
};
use sixd_net::EpochRecord;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.synth.sequences = 1;
    cfg.synth.views_per_sequence = 2;
    cfg.synth.rotations_per_view = 3;
    cfg.arch.stem_channels = 4;
    cfg.arch.head_channels = 4;
    cfg.arch.hidden_width = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.backgrounds = 2;
    cfg
}

fn quiet(_: &str, _: &EpochRecord) {}

fn run(e: Experiment, cfg: &ExperimentConfig) -> ExperimentReport {
    run_experiment(e, cfg, &quiet).unwrap()
}

fn assert_finite(report: &ExperimentReport) {
    for row in &report.table.rows {
        assert!(row.values.iter().all(|v| v.is_finite()), "{:?}", row);
    }
}

#[test]
fn names_round_trip() {
    for e in Experiment::ALL {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
    }
    assert!(matches!("nope".parse::<Experiment>(), Err(EvalError::UnknownExperiment(_))));
}

#[test]
fn block_compare_fills_sixteen_cells() {
    let r = run(Experiment::BlockCompare, &tiny());
    assert_eq!(r.table.cell_count(), 16);
    assert_eq!(r.reference.as_ref().unwrap().cell_count(), 16);
    assert_finite(&r);
    assert_eq!(r.bins.len(), 2);
    assert_eq!(r.curves.len(), 2);
    assert!(r.table.value(&["val", "orientation_deg", "multi"], "occlusion").is_some());
}

#[test]
fn ablation_fills_every_variant() {
    let r = run(Experiment::Ablation, &tiny());
    assert_eq!(r.table.rows.len(), 6);
    assert_eq!(r.table.cell_count(), 24);
    assert_finite(&r);
    // three per-class models plus five shared ones
    assert_eq!(r.curves.len(), 8);
}

#[test]
fn generalization_fills_grid() {
    let r = run(Experiment::Generalization, &tiny());
    assert_eq!(r.table.cell_count(), 4);
    assert_finite(&r);
}

#[test]
fn symmetry_curves_report_both_runs() {
    let cfg = tiny();
    let r = run(Experiment::SymmetryCurves, &cfg);
    assert_eq!(r.curves.len(), 2);
    for c in &r.curves {
        assert_eq!(c.curves.len(), cfg.train.epochs);
    }
    let e = r.table.value(&["canonical"], "epochs_to_threshold").unwrap();
    assert!(e >= 1.0 && e <= cfg.train.epochs as f64);
    // The lower final loss sits under its own shared bar, so that run always reaches it.
    let finals: Vec<f64> = ["canonical", "raw"]
        .iter()
        .map(|t| r.table.value(&[t], "final_val_quat_loss").unwrap())
        .collect();
    let best = if finals[0] <= finals[1] { "canonical" } else { "raw" };
    let shared = r.table.value(&[best], "epochs_to_shared_threshold").unwrap();
    assert!(shared >= 1.0 && shared <= cfg.train.epochs as f64);
}

#[test]
fn reruns_write_identical_files() {
    let mut cfg = tiny();
    cfg.threads = 2;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = write_report(&run(Experiment::BlockCompare, &cfg), a.path()).unwrap();
    cfg.threads = 1;
    let fb = write_report(&run(Experiment::BlockCompare, &cfg), b.path()).unwrap();
    assert_eq!(fa, fb);
    for f in &fa {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        if f.ends_with(".json") {
            // the embedded config records the thread count
            let strip = |v: &[u8]| {
                let mut j: serde_json::Value = serde_json::from_slice(v).unwrap();
                j["config"]["threads"] = serde_json::Value::Null;
                j
            };
            assert_eq!(strip(&x), strip(&y), "{f}");
        } else {
            assert_eq!(x, y, "{f}");
        }
    }
}

#[test]
fn threshold_epoch_matches_scan() {
    assert_eq!(epochs_to_threshold(&[], 1.1), None);
    assert_eq!(epochs_to_threshold(&[5.0], 1.1), Some(1));
    let v = [10.0, 5.0, 1.2, 1.05, 1.1, 1.0];
    // 1.1 * 1.0 = 1.1, first value <= 1.1 is 1.05 at epoch 4
    assert_eq!(epochs_to_threshold(&v, 1.1), Some(4));
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let err = serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#);
    assert!(err.is_err());
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"bins": 3, "train": {"epochs": 7}}"#).unwrap();
    assert_eq!(cfg.bins, 3);
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.backgrounds, 4);
    let mut bad = tiny();
    bad.bins = 0;
    assert!(matches!(run_experiment(Experiment::Ablation, &bad, &quiet), Err(EvalError::InvalidConfig(_))));
    bad = tiny();
    bad.synth.max_occlusion_fraction = 0.8;
    assert!(run_experiment(Experiment::BlockCompare, &bad, &quiet).is_err());
}
