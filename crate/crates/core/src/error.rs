use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// The film thickness left the admissible range at `node`.
    #[error("film height {value} at node {node} is not positive")]
    NonPositiveHeight { node: usize, value: f64 },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("Riccati synthesis failed: {0}")]
    Synthesis(String),

    #[error("retained dimension {retain} is below the unstable dimension {unstable}")]
    Controllability { retain: usize, unstable: usize },

    #[error("modes {modes:?} are not {property} through the reduced model")]
    ModeDeficiency {
        property: &'static str,
        modes: Vec<i64>,
    },

    #[error("output feedback iteration failed to start: {0}")]
    SofFailToStart(String),

    #[error("output feedback iteration failed to converge after {iterations} iterations (residual {residual:e}): {reason}")]
    SofFailToConverge {
        iterations: usize,
        residual: f64,
        reason: String,
    },

    #[error("C S C^T is singular; the observers cannot see the closed-loop state")]
    SingularObservation,

    #[error("time step underflow at t = {t} (dt = {dt:e})")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("LAPACK routine {routine} returned info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("malformed data file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
