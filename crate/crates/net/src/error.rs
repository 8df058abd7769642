use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate head output: raw quaternion norm {0:e} in block {1}")]
    DegenerateHead(f64, usize),
    #[error("class id {class_id} out of range for {blocks} output blocks")]
    ClassOutOfRange { class_id: usize, blocks: usize },
    #[error("diverged: non-finite gradient in parameter tensor {0}")]
    Diverged(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
