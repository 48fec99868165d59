use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum QprError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("degenerate instrument: {0}")]
    DegenerateInstrument(String),

    #[error("rank-deficient design ({rank} of {cols} columns independent)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("explosive path: |x_t| exceeded 1e12 at t = {t}")]
    ExplosivePath { t: usize },

    #[error("calibration failed: only {convergent} bootstrap replications converged, {required} required")]
    CalibrationFailed { convergent: usize, required: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-monotone dates at row {row}: {date}")]
    NonMonotoneDates { row: usize, date: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QprError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            QprError::InvalidInput(_) | QprError::Config(_) | QprError::Json(_) => ErrorKind::Config,
            QprError::Data(_)
            | QprError::MissingColumn(_)
            | QprError::NonMonotoneDates { .. }
            | QprError::Io(_)
            | QprError::Csv(_) => ErrorKind::Data,
            QprError::DegenerateRegressor(_)
            | QprError::DegenerateInstrument(_)
            | QprError::RankDeficient { .. }
            | QprError::Singular(_)
            | QprError::ExplosivePath { .. }
            | QprError::CalibrationFailed { .. }
            | QprError::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T, E = QprError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> QprError {
    QprError::InvalidInput(msg.into())
}
