use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::AlignmentReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for `{name}`: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor `{0}` is not present in the base checkpoint")]
    MissingTensor(String),

    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shard file {0} referenced by the index does not exist")]
    ShardMissing(PathBuf),

    #[error("tensor `{name}` needs {needed} bytes but shards are capped at {max_shard_bytes}")]
    ShardTooSmall {
        name: String,
        needed: usize,
        max_shard_bytes: usize,
    },

    #[error("checkpoints are not diffable: {}", .0.summary())]
    NotDiffable(Box<AlignmentReport>),

    #[error("digest mismatch: adapter expects {expected}, base has {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("SVD did not converge for `{0}`")]
    ConvergenceFailure(String),

    #[error("all singular values are zero")]
    AllZero,

    #[error("DoRA column {column} of `{name}` has norm {norm:e}, below 1e-12")]
    DegenerateColumn {
        name: String,
        column: usize,
        norm: f64,
    },

    #[error("unresolved adapter targets: {}", .0.join(", "))]
    UnresolvedTarget(Vec<String>),

    #[error("prediction id `{0}` does not exist in the references")]
    UnknownId(String),

    #[error("example `{0}` has no gold passage in the corpus")]
    MissingGold(String),

    #[error("result and gold id sets differ ({0})")]
    KeyMismatch(String),

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("template `{0}` requires a context passage")]
    MissingContext(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
