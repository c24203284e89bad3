use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("degenerate triangle: face {0} has zero area")]
    DegenerateFace(usize),
    #[error("vertex index {index} out of range (mesh has {len} vertices)")]
    VertexOutOfRange { index: usize, len: usize },
    #[error("face index {index} out of range (mesh has {len} faces)")]
    FaceOutOfRange { index: usize, len: usize },
    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),
    #[error("uncharted texel at uv ({u}, {v})")]
    UnchartedTexel { u: f64, v: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("near-zero quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty point set")]
    EmptyPointSet,
    #[error("no part has any assigned vertex")]
    NoParts,
    #[error("mirror pairing table is missing")]
    MissingPairing,
    #[error("non-finite value in loss term `{term}` at iteration {iteration}")]
    NonFinite { term: &'static str, iteration: usize },
    #[error("unknown loss weight key `{0}`")]
    UnknownWeight(String),
    #[error("unknown loss `{0}`")]
    UnknownLoss(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
