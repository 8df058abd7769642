use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running a valid configuration; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    sixd_synth::SynthError,
    sixd_net::NetError,
    sixd_icp::IcpError,
    sixd_core::GeometryError,
    serde_json::Error,
    csv::Error,
    image::ImageError
);

impl From<sixd_eval::EvalError> for CliError {
    fn from(e: sixd_eval::EvalError) -> Self {
        match e {
            sixd_eval::EvalError::InvalidConfig(m) => CliError::Config(m),
            sixd_eval::EvalError::UnknownExperiment(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
