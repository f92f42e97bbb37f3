use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid user trace: {0}")]
    InvalidTrace(String),
    #[error("invalid metro map: {0}")]
    InvalidMetro(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignalError {
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("trip too short: {stops} confirmed stop(s), need 2 to observe a tunnel")]
    TooShortTrip { stops: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("empty input series")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl From<SignalError> for MatchError {
    fn from(e: SignalError) -> Self {
        MatchError::InsufficientData(e.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("anchoring failed: {0}")]
    Failed(String),
    #[error("ambiguous anchoring: {} candidate mappings", candidates.len())]
    Ambiguous {
        /// Each candidate lists (node, station) assignments.
        candidates: Vec<Vec<(usize, String)>>,
    },
    #[error("unknown hint: {0}")]
    UnknownHint(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocateError {
    #[error("no running events to locate")]
    NoEvents,
    #[error("pattern map is empty")]
    EmptyMap,
    #[error("no candidate path below the DTW threshold")]
    NoFix,
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid trip spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {} invariant violation(s), first: {}", violations.len(), violations.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation { path: PathBuf, violations: Vec<Violation> },
    #[error("{path}: unsupported map version {found} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}")]
    Input(String),
}

impl IoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("corpus mismatch: {0}")]
    Input(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Locate(#[from] LocateError),
}
