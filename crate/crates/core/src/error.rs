use thiserror::Error;

pub type Result<T> = std::result::Result<T, DgmError>;

#[derive(Debug, Error)]
pub enum DgmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("camera graph has no tracklets")]
    EmptyGraph,
    #[error("tracklet {0} has no frames")]
    EmptyTracklet(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not a valid metric: {0}")]
    InvalidMetric(String),
    #[error("data has rank {rank}, fewer than the {requested} requested components")]
    RankDeficient { rank: usize, requested: usize },
    #[error("need at least {required} samples, got {found}")]
    TooFewSamples { required: usize, found: usize },
    #[error("neighborhood is empty")]
    EmptyNeighborhood,
    #[error("instance {rows}x{cols} exceeds the exhaustive search limit")]
    InstanceTooLarge { rows: usize, cols: usize },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("no positive pairs survive re-weighting")]
    NoPositives,
    #[error("no hard negative pairs survive re-weighting")]
    NoNegatives,
    #[error("eigendecomposition failed on non-finite input")]
    EigenFailure,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DgmError {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DgmError::RankDeficient { .. }
                | DgmError::EigenFailure
                | DgmError::NoPositives
                | DgmError::NoNegatives
                | DgmError::NonFinite(_)
                | DgmError::InvalidMetric(_)
        )
    }
}
