use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),
    #[error("missing depth: no valid depth sample near pixel ({x:.1}, {y:.1})")]
    MissingDepth { x: f64, y: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid symmetry spec: {0}")]
    InvalidSymmetry(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}
