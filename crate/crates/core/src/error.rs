use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("io failure on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header, expected `{expected}`")]
    BadHeader { file: String, expected: String },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: non-numeric count")]
    NonNumericCount { file: String, line: usize },
    #[error("{file}:{line}: non-finite value")]
    NonFiniteValue { file: String, line: usize },
    #[error("duplicate key ({0}, {1})")]
    DuplicateKey(String, String),
    #[error("unknown region {0}")]
    UnknownRegion(String),
    #[error("invalid region code `{0}`")]
    BadCode(String),
    #[error("inconsistent hierarchy: {0}")]
    InconsistentHierarchy(String),
    #[error("zip {0} has no positive county overlap")]
    NoOverlap(String),
    #[error("too few counties: {counties} counties for {folds} folds plus a holdout")]
    TooFewCounties { counties: usize, folds: usize },
    #[error("too few states: {states} states for {folds} folds")]
    TooFewStates { states: usize, folds: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("feature dimension {d} outside 1..={max}")]
    BadDimension { d: usize, max: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no observed signatures available for median fill")]
    NoObservedSignatures,
    #[error("county {0} has no non-absent zip signatures")]
    EmptyCounty(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("every tuning fold was degenerate")]
    AllFoldsDegenerate,
    #[error("interpolator has no sites")]
    NoSites,
    #[error("no labels available")]
    NoLabels,
    #[error("evaluated actuals have zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("report incomplete: {0}")]
    IncompleteReport(&'static str),
    #[error("evaluation set is empty")]
    EmptyTestSet,
    #[error("leakage: {count} regions appear in both training and evaluation (first: {first})")]
    Leakage { count: usize, first: String },
    #[error("oracle input too large: {0}")]
    TooLarge(String),
    #[error("invalid synthetic world spec: {0}")]
    SpecInvalid(String),
    #[error("linear solve failed: {0}")]
    Numerical(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the caller's inputs rather than by the environment or
    /// by the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Numerical(_) | Error::Json(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
