use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("curve has a cusp (zero planar speed) at t = {t}")]
    Cusp { t: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("covariance is not symmetric positive definite")]
    NotSpd,

    #[error("problem size {size} exceeds the limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("could not place {wanted} negative anchors after {attempts} attempts (scene too dense)")]
    SceneTooDense { wanted: usize, attempts: usize },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("non-finite loss in term {term}")]
    NonFinite { term: &'static str },

    #[error("optimization diverged at iteration {iteration} (loss {loss:e})")]
    Divergence { iteration: usize, loss: f64, trace: Vec<f64> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Invalid(_) => "invalid",
            Error::Degenerate(_) => "degenerate",
            Error::RankDeficient(_) => "rank_deficient",
            Error::Cusp { .. } => "cusp",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NotSpd => "not_spd",
            Error::TooLarge { .. } => "too_large",
            Error::SceneTooDense { .. } => "scene_too_dense",
            Error::Infeasible(_) => "infeasible",
            Error::NonFinite { .. } => "non_finite",
            Error::Divergence { .. } => "divergence",
        }
    }
}
