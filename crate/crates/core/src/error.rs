use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    #[error("malformed record at row {row}: {reason}")]
    MalformedRecord { row: usize, reason: String },

    #[error("event at row {row} is outside the {width}x{height} sensor: ({x}, {y})")]
    OutOfBounds {
        row: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("timestamp at row {row} decreases ({t} < {previous})")]
    NonMonotonicTime { row: usize, t: u64, previous: u64 },

    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: u64, end: u64 },

    #[error("invalid event stream: {0}")]
    InvalidStream(String),

    #[error("point {index} reaches non-positive depth {depth} at t = {time} s")]
    PointBehindCamera { index: usize, depth: f64, time: f64 },

    #[error("invalid scene configuration: {0}")]
    InvalidScene(String),

    #[error("scene points do not share a common depth; no shared weight vector exists")]
    NonUniformDepth,

    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("invalid bin count {0}")]
    InvalidBins(usize),

    #[error("anchor count must be at least 1, got {0}")]
    BadAnchorCount(usize),

    #[error("expected {expected} interior knots, got {got}")]
    WrongInteriorCount { expected: usize, got: usize },

    #[error("interior knots must be sorted and lie strictly inside (0, 1)")]
    UnsortedInterior,

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("basis index {index} out of range for {count} basis functions")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("need at least {needed} temporal blocks, got {got}")]
    TooFewBlocks { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("temporal cost needs at least two blocks, got {0}")]
    FewerThanTwoBlocks(usize),

    #[error("pyramids differ in level count or block count")]
    LevelMismatch,

    #[error("timestamp list is empty")]
    EmptyTimestamps,

    #[error("invalid timestamps: {0}")]
    InvalidTimestamps(String),

    #[error("non-positive depth {depth} at ({x}, {y})")]
    NonPositiveDepth { x: usize, y: usize, depth: f64 },

    #[error("valid mask selects no pixels")]
    EmptyValidMask,

    #[error("time grid needs at least two samples, got {0}")]
    GridTooShort(usize),

    #[error("normal system for pixel ({x}, {y}) is singular")]
    SingularSystem { x: usize, y: usize },

    #[error("updater produced an invalid increment: {0}")]
    InvalidIncrement(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl Error {
    /// True for errors caused by unreadable or malformed input data, as opposed
    /// to failures of the computation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedRecord { .. }
                | Error::OutOfBounds { .. }
                | Error::NonMonotonicTime { .. }
                | Error::Format(_)
                | Error::Io(_)
        )
    }
}
