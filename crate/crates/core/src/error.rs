use thiserror::Error;

/// Errors produced by the estimators, samplers and I/O layer.
#[derive(Debug, Error)]
pub enum SaeError {
    /// Input data failed validation. All problems found are reported together.
    #[error("invalid input: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SaeError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SaeError::Validation(vec![msg.into()])
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        SaeError::InvalidParameter(msg.into())
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SaeError::Validation(_)
                | SaeError::Dimension { .. }
                | SaeError::InvalidParameter(_)
                | SaeError::Csv(_)
                | SaeError::Io(_)
                | SaeError::Json(_)
        )
    }

    pub fn is_convergence(&self) -> bool {
        matches!(self, SaeError::NonConvergence(_))
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            SaeError::Validation(_) => "validation",
            SaeError::Dimension { .. } => "dimension",
            SaeError::InvalidParameter(_) => "invalid_parameter",
            SaeError::Singular(_) => "singular",
            SaeError::NonConvergence(_) => "non_convergence",
            SaeError::Io(_) => "io",
            SaeError::Csv(_) => "csv",
            SaeError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = SaeError> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SaeError::Dimension {
            what,
            expected,
            got,
        })
    }
}
