use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty Γ: no boundary face lies inside the patch {0}")]
    EmptyGamma(String),

    #[error("empty region: no tetrahedron barycenter lies inside {0}")]
    EmptyRegion(String),

    #[error("ellipticity violated in {region}: {detail}")]
    EllipticityViolated { region: String, detail: String },

    #[error("degenerate tetrahedron (signed volume {volume:e})")]
    DegenerateTet { volume: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("resonant or near-resonant k = {k}: relative smallest singular value estimate {sigma_min:e}")]
    Resonant { k: f64, sigma_min: f64 },

    #[error("linear solve rejected: relative residual {residual:e} exceeds {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("dense linear algebra failure: {0}")]
    Linalg(String),

    #[error("{}", format_config_errors(.0))]
    Config(Vec<ConfigError>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::CheckFailed(_) => 3,
            Error::Io { .. } => 4,
            Error::Resonant { .. } | Error::Residual { .. } => 5,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_config_errors(errors: &[ConfigError]) -> String {
    let lines: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
    format!("configuration error(s):\n  {}", lines.join("\n  "))
}
