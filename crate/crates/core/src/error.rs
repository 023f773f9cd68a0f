use thiserror::Error;

pub type Result<T> = std::result::Result<T, QuotaError>;

#[derive(Debug, Error)]
pub enum QuotaError {
    #[error("video contains no frames")]
    EmptyVideo,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("frame count must be at least 1")]
    ZeroFrames,
    #[error("requested {requested} frames but only {available} are available")]
    TooFewFrames { requested: usize, available: usize },

    #[error("query is empty")]
    EmptyQuery,
    #[error("could not parse decouple response: {0}")]
    UnparseableResponse(String),

    #[error("scorer unreachable after {attempts} attempts: {message}")]
    ScorerUnreachable { attempts: usize, message: String },
    #[error("scorer protocol error: {0}")]
    ScorerProtocol(String),
    #[error("expected {expected} scores, got {actual}")]
    ScoreCountMismatch { expected: usize, actual: usize },
    #[error("score {value} for frame {index} is outside [0, 1]")]
    OutOfRangeScore { index: usize, value: f64 },
    #[error("score {value} for frame {index} is negative")]
    NegativeScore { index: usize, value: f64 },
    #[error("score at position {index} is not a number")]
    NonNumericScore { index: usize },

    #[error("budget {budget} is smaller than the frame count {frames}")]
    BudgetTooSmall { budget: usize, frames: usize },
    #[error("grid target must be positive")]
    NonPositiveTarget,
    #[error("budget {budget} exceeds {frames} frames x cap {cap}")]
    InfeasibleBudget {
        budget: usize,
        frames: usize,
        cap: usize,
    },
    #[error("grid {target_h}x{target_w} exceeds source {source_h}x{source_w}")]
    UpsampleRequested {
        source_h: usize,
        source_w: usize,
        target_h: usize,
        target_w: usize,
    },
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<QuotaError>,
    },

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("{0} trailing bytes after last frame")]
    TrailingBytes(usize),
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QuotaError {
    /// Stable kebab-case identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            QuotaError::EmptyVideo => "empty-video",
            QuotaError::DimensionMismatch(_) => "dimension-mismatch",
            QuotaError::NonFiniteValue { .. } => "non-finite-value",
            QuotaError::InvalidValue(_) => "invariant-violation",
            QuotaError::NonPositiveDuration(_) => "non-positive-duration",
            QuotaError::ZeroFrames => "zero-frames",
            QuotaError::TooFewFrames { .. } => "too-few-frames",
            QuotaError::EmptyQuery => "empty-query",
            QuotaError::UnparseableResponse(_) => "unparseable-response",
            QuotaError::ScorerUnreachable { .. } => "scorer-unreachable",
            QuotaError::ScorerProtocol(_) => "scorer-protocol",
            QuotaError::ScoreCountMismatch { .. } => "score-count-mismatch",
            QuotaError::OutOfRangeScore { .. } => "out-of-range-score",
            QuotaError::NegativeScore { .. } => "negative-score",
            QuotaError::NonNumericScore { .. } => "non-numeric-score",
            QuotaError::BudgetTooSmall { .. } => "budget-too-small",
            QuotaError::NonPositiveTarget => "non-positive-target",
            QuotaError::InfeasibleBudget { .. } => "infeasible-budget",
            QuotaError::UpsampleRequested { .. } => "upsample-requested",
            QuotaError::Frame { source, .. } => source.kind(),
            QuotaError::BadMagic(_) => "bad-magic",
            QuotaError::VersionUnsupported(_) => "version-unsupported",
            QuotaError::TruncatedFile(_) => "truncated-file",
            QuotaError::TrailingBytes(_) => "trailing-bytes",
            QuotaError::MalformedJson(_) => "malformed-json",
            QuotaError::Config(_) => "invalid-config",
            QuotaError::Io(_) => "io",
        }
    }

    /// Frame index attached by per-frame stages, if any.
    pub fn frame_index(&self) -> Option<usize> {
        match self {
            QuotaError::Frame { index, .. } => Some(*index),
            _ => None,
        }
    }

    pub(crate) fn at_frame(self, index: usize) -> Self {
        QuotaError::Frame {
            index,
            source: Box::new(self),
        }
    }
}
