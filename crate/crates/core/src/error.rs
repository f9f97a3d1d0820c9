//! Crate-wide error type. Domain failures carry enough context to be
//! actionable from the command line (line numbers, ids, counts).

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// A record line that does not parse or fails validation.
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    /// Corpus file held no records at all.
    EmptyCorpus { path: PathBuf },
    /// Two records carry the same explicit id.
    DuplicateId { id: String, line: usize },
    /// Serialization template is missing (or repeats) a required slot.
    BadTemplate { reason: String },
    /// Detection key is blank, or not a substring of its payload text.
    BadDetectionKey { key: String },
    /// Anchor was never indexed.
    UnknownAnchor { anchor: String },
    /// Anchor has no recorded continuation, so the score is undefined.
    UnscorableAnchor { anchor: String },
    /// Index file does not match the corpus it is being used with.
    ChecksumMismatch { expected: String, found: String, what: String },
    /// Poison rate rounds down to zero victims.
    NothingToPoison { n_samples: usize, rate: f64 },
    /// HPS strategy was asked for but no anchor list or index was supplied.
    MissingAnchors,
    /// Response contains none of the candidate anchors.
    NoAnchorInResponse { sample_id: String },
    /// Plan was made against a different version of the sample.
    StalePlan { sample_id: String },
    /// Ran out of substitute candidates while preserving the victim count.
    InsufficientVictims { needed: usize, planned: usize },
    /// Moving-average kernels must be odd so the window has a center.
    EvenKernel { kernel: usize },
    /// Threshold calibration needs a minimum number of clean traces.
    TooFewTraces { got: usize, need: usize },
    /// A trace has no label to evaluate against.
    UnlabeledTrace { sample_id: String },
    /// A rate over zero records is undefined.
    EmptyMeasurementSet,
    /// Topic condition matched no query in the set.
    EmptyConditionMatch { topic: String },
    /// Topic spec has no usable match terms.
    EmptyTopic { name: String },
    /// Generation query pool overlaps the training corpus by id.
    QueryPoolOverlap { id: String },
    /// Query pool is too small for the configured run.
    QueryPoolExhausted { need: usize, have: usize },
    /// Every generated response came back empty; the lineage cannot continue.
    DegenerateSyntheticSet { generation: usize },
    /// Catch-all for invalid configuration values.
    InvalidConfig { reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "io error on {}: {}", path.display(), source),
            Error::MalformedRecord { path, line, reason } => {
                write!(f, "{}:{}: malformed record: {}", path.display(), line, reason)
            }
            Error::EmptyCorpus { path } => write!(f, "{}: no records found", path.display()),
            Error::DuplicateId { id, line } => {
                write!(f, "duplicate sample id {:?} (second occurrence at line {})", id, line)
            }
            Error::BadTemplate { reason } => write!(f, "bad serialization template: {}", reason),
            Error::BadDetectionKey { key } => write!(
                f,
                "detection key {:?} is blank or not contained in its payload text after whitespace normalization",
                key
            ),
            Error::UnknownAnchor { anchor } => write!(f, "anchor [{}] is not in the index", anchor),
            Error::UnscorableAnchor { anchor } => {
                write!(f, "anchor [{}] has no continuations and cannot be scored", anchor)
            }
            Error::ChecksumMismatch { expected, found, what } => write!(
                f,
                "{} was built against corpus {} but this corpus is {} (pass --force to override)",
                what, expected, found
            ),
            Error::NothingToPoison { n_samples, rate } => write!(
                f,
                "rate {} of {} samples rounds down to zero victims; nothing to poison",
                rate, n_samples
            ),
            Error::MissingAnchors => {
                write!(f, "hps strategy needs a scored anchor list or an n-gram index")
            }
            Error::NoAnchorInResponse { sample_id } => {
                write!(f, "sample {}: no candidate anchor occurs in the response", sample_id)
            }
            Error::StalePlan { sample_id } => write!(
                f,
                "sample {}: response changed since the plan was made; re-plan before applying",
                sample_id
            ),
            Error::InsufficientVictims { needed, planned } => write!(
                f,
                "only {} of {} required victims admit a splice plan; corpus has too few anchor hits",
                planned, needed
            ),
            Error::EvenKernel { kernel } => {
                write!(f, "kernel size {} is even; the moving average needs a center token", kernel)
            }
            Error::TooFewTraces { got, need } => {
                write!(f, "calibration needs at least {} clean traces, got {}", need, got)
            }
            Error::UnlabeledTrace { sample_id } => {
                write!(f, "trace {} has no label", sample_id)
            }
            Error::EmptyMeasurementSet => {
                write!(f, "cannot compute a rate over zero records")
            }
            Error::EmptyConditionMatch { topic } => {
                write!(f, "topic {:?} matched no queries; conditional rate is undefined", topic)
            }
            Error::EmptyTopic { name } => {
                write!(f, "topic {:?} has no non-empty match terms", name)
            }
            Error::QueryPoolOverlap { id } => {
                write!(f, "query pool id {:?} also appears in the training corpus", id)
            }
            Error::QueryPoolExhausted { need, have } => {
                write!(f, "query pool has {} records but the run needs {}", have, need)
            }
            Error::DegenerateSyntheticSet { generation } => write!(
                f,
                "generation {}: every synthetic response was empty; surrogate has collapsed",
                generation
            ),
            Error::InvalidConfig { reason } => write!(f, "invalid config: {}", reason),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
