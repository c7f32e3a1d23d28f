use crate::grid::RankCoord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cannot parse grid {input:?} at position {position}: {message}")]
    GridParse {
        input: String,
        position: usize,
        message: String,
    },

    #[error("coordinate {coord} is outside the {grid} grid")]
    CoordOutOfRange { coord: RankCoord, grid: String },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{what} = {value} is not divisible by {divisor}")]
    Divisibility {
        what: String,
        value: usize,
        divisor: usize,
    },

    #[error("matrix contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("replicated block at {coord} diverges from its replica at {other}")]
    ReplicaDivergence { coord: RankCoord, other: RankCoord },

    #[error("sharded matrix is missing the block for {0}")]
    MissingBlock(RankCoord),

    #[error("deadlock: every live rank is blocked ({})", format_blocked(.blocked))]
    Deadlock { blocked: Vec<(RankCoord, String)> },

    #[error("collective mismatch at rank {coord} step {step}: expected {expected}, found {found}")]
    CollectiveMismatch {
        coord: RankCoord,
        step: usize,
        expected: String,
        found: String,
    },

    #[error("rank {coord} failed at step {step}: {source}")]
    RankFailed {
        coord: RankCoord,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run aborted by another rank")]
    Aborted,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_blocked(blocked: &[(RankCoord, String)]) -> String {
    blocked
        .iter()
        .map(|(c, what)| format!("{c} waiting on {what}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn divisibility(what: impl Into<String>, value: usize, divisor: usize) -> Self {
        Error::Divisibility {
            what: what.into(),
            value,
            divisor,
        }
    }

    /// Drops the [`Error::RankFailed`] wrappers and returns the underlying cause.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::RankFailed { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
