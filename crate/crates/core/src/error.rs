use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no section heading found in document")]
    MalformedHeadings,
    #[error("selected section range of corpus `{0}` contains no prose after cleaning")]
    EmptyAfterCleaning(String),
    #[error("invalid corpus profile: {0}")]
    InvalidProfile(String),
    #[error("cannot build a vocabulary over an empty segment list")]
    EmptyCorpus,
    #[error("unknown corpus `{0}`")]
    UnknownCorpus(String),
    #[error("unknown scope `{0}`")]
    UnknownScope(String),
    #[error("similarity band requires 0 <= psi_min < psi_max <= 1, got [{min}, {max}]")]
    BadThresholds { min: f64, max: f64 },
    #[error("invalid case label {0}, expected 1..=7")]
    InvalidCase(u8),
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("pair `{pair_id}` belongs to phase {expected}, not {got}")]
    WrongPhase {
        pair_id: String,
        expected: u32,
        got: u32,
    },
    #[error("pair `{0}` was not sampled for annotation in this phase")]
    PairNotSampled(String),
    #[error("class `{0}` has no training examples")]
    EmptyClass(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedBackendResponse(String),
    #[error("predictions reference different pairs (`{0}` vs `{1}`)")]
    MixedPairIds(String, String),
    #[error("no predictions to vote over")]
    EmptyPredictionSet,
    #[error("cannot augment empty text")]
    EmptyText,
    #[error("need {needed} unannotated candidates, only {available} available")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("{pending} sampled pairs of phase {phase} are still awaiting annotation")]
    AnnotationIncomplete { phase: u32, pending: usize },
    #[error("no gold label for pair `{0}`")]
    MissingGold(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid phase request: {0}")]
    InvalidPhase(String),
    #[error("path `{0}` is not empty")]
    PathNotEmpty(PathBuf),
    #[error("corrupt project layout: {0}")]
    CorruptLayout(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("unsupported project format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("project lock `{0}` is held by another writer")]
    LockHeldElsewhere(PathBuf),
    #[error("project opened read-only")]
    ReadOnly,
    #[error("invalid lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("i/o failure on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in `{context}`: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Machine-readable code used by the HTTP API and the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownPair(_) => "unknown_pair",
            Error::WrongPhase { .. } => "wrong_phase",
            Error::PairNotSampled(_) => "pair_not_sampled",
            Error::AnnotationIncomplete { .. } => "annotation_incomplete",
            Error::BackendUnavailable(_) | Error::MalformedBackendResponse(_) => {
                "backend_unavailable"
            }
            _ => "bad_request",
        }
    }
}
