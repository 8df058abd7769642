use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("object is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("object not visible in the rendered frame")]
    EmptyMask,
    #[error("placement moves {0:.1}% of the object out of frame")]
    OutOfFrame(f64),
    #[error("occlusion fraction {0} exceeds 0.5")]
    OcclusionTooLarge(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Geometry(#[from] sixd_core::GeometryError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
