use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structural problems found while building or loading an [`Ensemble`](crate::Ensemble).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("n_dims must be at least 1")]
    ZeroDims,
    #[error("bias has {found} entries, expected n_dims = {expected}")]
    BiasLength { expected: usize, found: usize },
    #[error("scale must be finite, got {0}")]
    NonFiniteScale(f64),
    #[error("borders for feature {feature}: feature index out of range (n_features = {n_features})")]
    BorderFeatureOutOfRange { feature: usize, n_features: usize },
    #[error("borders for feature {feature} declared more than once")]
    DuplicateBorderFeature { feature: usize },
    #[error("borders for feature {feature}: {count} borders exceed the 8-bit bin limit of 255")]
    TooManyBorders { feature: usize, count: usize },
    #[error("borders for feature {feature}: value at position {position} is NaN")]
    NanBorder { feature: usize, position: usize },
    #[error("borders for feature {feature}: not strictly ascending at position {position}")]
    BordersNotAscending { feature: usize, position: usize },
    #[error("tree {tree}: depth {depth} outside [1, 16]")]
    DepthOutOfRange { tree: usize, depth: usize },
    #[error("tree {tree}: {found} splits for depth {depth}")]
    SplitCountMismatch { tree: usize, depth: usize, found: usize },
    #[error("tree {tree}, level {level}: feature {feature} out of range (n_features = {n_features})")]
    SplitFeatureOutOfRange {
        tree: usize,
        level: usize,
        feature: usize,
        n_features: usize,
    },
    #[error("tree {tree}, level {level}: border_bin {border_bin} exceeds the {n_borders} borders of feature {feature}")]
    SplitBinOutOfRange {
        tree: usize,
        level: usize,
        feature: usize,
        border_bin: u8,
        n_borders: usize,
    },
    #[error("tree {tree}: leaf count mismatch, expected {expected} values (2^depth x n_dims), found {found}")]
    LeafCountMismatch {
        tree: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed model file: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{path}, line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("profiler: {0}")]
    Profile(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
