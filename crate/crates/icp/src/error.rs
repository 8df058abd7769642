use thiserror::Error;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("empty segment: no masked pixel has valid depth")]
    EmptySegment,
    #[error("empty cloud")]
    EmptyCloud,
    #[error("dimension mismatch: mask {mask:?} vs depth {depth:?}")]
    DimensionMismatch { mask: (usize, usize), depth: (usize, usize) },
    #[error("too few points: {have} points, need more than {need}")]
    TooFewPoints { have: usize, need: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("cloud has no covariances")]
    MissingCovariances,
    #[error("invalid covariance at point {0}: not symmetric positive semi-definite")]
    InvalidCovariance(usize),
    #[error("no overlap: no correspondence within {0} m")]
    NoOverlap(f64),
    #[error("singular normal equations at iteration {iteration} with {correspondences} correspondences")]
    Singular { iteration: usize, correspondences: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
