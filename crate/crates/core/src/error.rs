use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("serialization error ({context}): {message}")]
    Serde { context: String, message: String },

    #[error("audio error on {path}: {message}")]
    Audio { path: PathBuf, message: String },

    #[error("audio too short: {samples} samples, need at least {required}")]
    AudioTooShort { samples: usize, required: usize },

    #[error("phoneme count mismatch for '{id}': {phonemes} phonemes vs {durations} durations")]
    PhonemeCountMismatch {
        id: String,
        phonemes: usize,
        durations: usize,
    },

    #[error("duration/mel mismatch for '{id}': durations sum to {duration_frames} frames, mel has {mel_frames}")]
    DurationMismatch {
        id: String,
        duration_frames: usize,
        mel_frames: usize,
    },

    #[error("missing alignment for '{id}' (expected {path})")]
    MissingAlignment { id: String, path: PathBuf },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("out-of-vocabulary phoneme id {id} (vocabulary size {vocab_size})")]
    OutOfVocabulary { id: usize, vocab_size: usize },

    #[error("unknown phoneme symbol(s): {}", .0.join(", "))]
    UnknownPhoneme(Vec<String>),

    #[error("negative duration {value} at position {index}")]
    NegativeDuration { index: usize, value: i64 },

    #[error("reference too short: {frames} frames, the reference encoder needs at least {required}")]
    ReferenceTooShort { frames: usize, required: usize },

    #[error("empty text")]
    EmptyText,

    #[error("emotion provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("unknown label '{label}' (known: {})", .known.join(", "))]
    UnknownLabel { label: String, known: Vec<String> },

    #[error("empty reference transcript after normalization")]
    EmptyReference,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("cannot map text to phonemes, unmappable tokens: {}", .0.join(", "))]
    G2p(Vec<String>),

    #[error("{artifact} fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("too few points: {n}, need at least {min}")]
    TooFewPoints { n: usize, min: usize },

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn serde(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Serde {
            context: context.into(),
            message: err.to_string(),
        }
    }
}
