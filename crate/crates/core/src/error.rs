use std::path::PathBuf;

/// Errors produced anywhere in the simulation and analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("geometry generation failed after {attempts} attempts: {reason}")]
    Geometry { attempts: usize, reason: String },

    #[error(
        "PSF quadrature did not converge: relative change {change:.3e} > {tolerance:.1e} \
         when doubling {points} quadrature points"
    )]
    Quadrature {
        points: usize,
        change: f64,
        tolerance: f64,
    },

    #[error("SNR undefined: {0}")]
    Snr(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    /// Wrap an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True when the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParam(_) | Error::Config(_) | Error::DimensionMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
