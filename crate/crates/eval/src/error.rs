use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown experiment {0:?} (expected block_compare, ablation, symmetry_curves or generalization)")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Synth(#[from] sixd_synth::SynthError),
    #[error(transparent)]
    Net(#[from] sixd_net::NetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
