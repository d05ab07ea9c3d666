use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("embedding dimension {0} is below the minimum of 2")]
    Dimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("prior mismatch: {0}")]
    PriorMismatch(String),
    #[error("class {0} has no complement mass, negatives are undefined")]
    DegenerateClass(usize),
    #[error("no negative samples supplied")]
    EmptyNegatives,
    #[error("enumeration needs {needed} terms, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("N = {0} is outside the inclusion-exclusion oracle range 1..=8")]
    OracleRangeExceeded(usize),
    #[error("nonpositive inner difference {value:e} at anchor {anchor}")]
    NegativeDenominator { anchor: usize, value: f64 },
    #[error("batch of {0} anchors is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    DivergenceDetected { epoch: usize, step: usize },
    #[error("data contains fewer than two classes")]
    SingleClassData,
    #[error("bound precondition violated: {0}")]
    BoundPreconditionViolated(String),
    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}
