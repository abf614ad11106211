//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("degenerate anchor combination: norm {norm:.3e} below 1e-10")]
    DegenerateLatent { norm: f64 },

    #[error("antipodal latent vectors: geodesic is ambiguous")]
    AntipodalLatents,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("all points behind camera")]
    BehindCamera,

    #[error("no valid projected points")]
    EmptyProjection,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("scene sampling exceeded {tries} rejection tries; use a sparser dataset spec")]
    RejectionBudget { tries: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("retrieval: no library meshes for category {0:?}")]
    EmptyCategoryShelf(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
