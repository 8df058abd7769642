//! Evaluation metrics, occlusion binning, report writing and the
//! experiment harness.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod metrics;
pub mod report;

pub use data::{input_shape, procedural_backgrounds, train_sample, training_data};
pub use error::EvalError;
pub use evaluate::predict_records;
pub use experiments::{
    ablation, block_compare, epochs_to_threshold, generalization, run_experiment, symmetry_curves, write_bins,
    write_report, BinSet, CurveSet, Experiment, ExperimentConfig, ExperimentReport, Progress, ABLATION_COLUMNS,
    THRESHOLD_FACTOR,
};
pub use metrics::{
    bin_by_occlusion, bin_edge, occlusion_bin, orientation_error_deg, summarize, translation_error_px, BinnedStats,
    ErrorSummary, EvalRecord, DEFAULT_BINS,
};
pub use report::{write_json, ReportRow, ReportTable};
