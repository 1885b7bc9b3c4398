use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Broad classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data, ids, shapes or configuration.
    Data,
    /// A numerical procedure could not produce a valid result.
    Numerical,
    /// A campaign protocol violation (stale batch, exhausted budget, ...).
    Protocol,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("matrix must have at least one column")]
    ZeroColumns,
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("dimensionality {d} outside 1..={max}")]
    InvalidDimension { d: usize, max: usize },
    #[error("data is rank deficient: achievable rank is {rank}")]
    RankDeficient { rank: usize },
    #[error("{rows} rows cannot support {components} mixture components")]
    Infeasible { rows: usize, components: usize },
    #[error("covariance is singular even after regularisation")]
    SingularCovariance,
    #[error("run outcomes with zero runs have no pass label")]
    UndefinedLabel,
    #[error("invalid run outcomes: {passes} passes out of {runs} runs")]
    InvalidOutcomes { runs: u32, passes: u32 },
    #[error("pass rate {0} outside [0, 1]")]
    InvalidPassRate(f64),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("record {id:?} refers to row {row} but the matrix has {rows} rows")]
    RowOutOfBounds { id: String, row: usize, rows: usize },
    #[error("weights are not a probability vector: {0}")]
    NotSimplex(String),
    #[error("correlation is undefined for constant input")]
    UndefinedCorrelation,
    #[error("metric needs both passing and failing inputs")]
    SingleClass,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cutoff {n} exceeds ranking length {len}")]
    CutoffOutOfRange { n: usize, len: usize },
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("invalid generation dump: {0}")]
    InvalidDump(String),
    #[error("invalid world spec: {0}")]
    WorldSpec(String),
    #[error("cannot bootstrap: {passing} passing reference inputs, need at least 2")]
    CannotBootstrap { passing: usize },
    #[error("labelling budget exhausted: reference set has {size} of {target}")]
    BudgetExhausted { size: usize, target: usize },
    #[error("unlabelled pool is empty")]
    PoolExhausted,
    #[error("stale or unknown batch id {0:?}")]
    StaleBatch(String),
    #[error("label for {0:?} which is not in the open batch")]
    UnexpectedLabel(String),
    #[error("no label supplied for batch member {0:?}")]
    MissingLabel(String),
    #[error("label oracle failed on {id:?}: {reason}")]
    OracleFailed { id: String, reason: String },
    #[error("every input of the last batch was skipped")]
    Stalled,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::RankDeficient { .. }
            | Error::SingularCovariance
            | Error::UndefinedCorrelation => ErrorKind::Numerical,
            Error::BudgetExhausted { .. }
            | Error::PoolExhausted
            | Error::StaleBatch(_)
            | Error::UnexpectedLabel(_)
            | Error::MissingLabel(_)
            | Error::OracleFailed { .. }
            | Error::Stalled => ErrorKind::Protocol,
            _ => ErrorKind::Data,
        }
    }
}
