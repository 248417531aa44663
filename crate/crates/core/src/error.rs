use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimensionality must be 2 or 3, got {0}")]
    Dimensionality(usize),
    #[error("invalid rank {rank} for world size {world}")]
    InvalidRank { rank: usize, world: usize },
    #[error("grid dims {dims:?} do not multiply to {ranks} ranks")]
    GridMismatch { dims: [usize; 3], ranks: usize },
    #[error("subdomain extent {extent} smaller than ghost width {ghost_width} on axis {axis}")]
    ExtentTooSmall {
        axis: usize,
        extent: usize,
        ghost_width: usize,
    },
    #[error("buffer holds {got} elements, region needs {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("{op} requires a {expected} region")]
    RegionRole { op: &'static str, expected: &'static str },
    #[error("partition index {index} out of range for {n_parts} partitions")]
    PartIndex { index: usize, n_parts: usize },
    #[error("message of {len} elements exceeds receive capacity {capacity}")]
    Truncation { len: usize, capacity: usize },
    #[error("partition size mismatch: received {got} elements, expected {expected}")]
    PartitionMismatch { expected: usize, got: usize },
    #[error("{op} is illegal while the request is {state}")]
    RequestState { op: &'static str, state: &'static str },
    #[error("duplicate pready for partition {part} in this generation")]
    DuplicatePready { part: usize },
    #[error("{op} called on a {dir} request")]
    WrongDirection { op: &'static str, dir: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("watchdog timeout after {seconds}s; unmatched messages:\n{details}")]
    WatchdogTimeout { seconds: f64, details: String },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("rank thread panicked: {0}")]
    RankPanic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
