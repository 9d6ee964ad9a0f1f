use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown arrhythmia: {0:?}")]
    UnknownArrhythmia(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unsupported sample rate {0} Hz (expected 250 Hz)")]
    UnsupportedRate(f64),
    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("malformed manifest row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate manifest entry: {0}")]
    DuplicateEntry(String),
    #[error("window too short: need {needed} samples, have {available}")]
    WindowTooShort { needed: usize, available: usize },
    #[error("band integral denominator is zero")]
    ZeroDenominator,
    #[error("zero variance input")]
    ZeroVariance,
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("annotation index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("too few beats: need {needed}, have {available}")]
    TooFewBeats { needed: usize, available: usize },
    #[error("method {method} does not apply to {arrhythmia} alarms")]
    UnsupportedMethod { method: String, arrhythmia: String },
    #[error("method {method} requires {resource}")]
    MissingResource { method: String, resource: String },
    #[error("empty sequence")]
    EmptySequence,
    #[error("band infeasible: lengths {len_a} and {len_b} differ by more than radius {radius}")]
    BandInfeasible {
        len_a: usize,
        len_b: usize,
        radius: usize,
    },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("record has no channel named {0}")]
    MissingLead(String),
    #[error("insufficient clean beats: found {found}, need {needed}")]
    InsufficientCleanBeats { found: usize, needed: usize },
    #[error("beat bank too small: {0} beats")]
    BankTooSmall(usize),
    #[error("beat bank is empty")]
    EmptyBank,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),
    #[error("ground truth unknown for record {0}")]
    UnknownTruth(usize),
    #[error("confusion counts are empty")]
    EmptyCounts,
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("malformed beat file {path}: {reason}")]
    MalformedBeatFile { path: PathBuf, reason: String },
    #[error("malformed corpus cache: {0}")]
    MalformedCorpus(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
