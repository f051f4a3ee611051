use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: usize, node: usize },

    #[error("edge {edge} references node {node}, but the network has {node_count} nodes")]
    NodeOutOfRange {
        edge: usize,
        node: usize,
        node_count: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("edge id {id} out of range for {len} edges")]
    EdgeOutOfRange { id: usize, len: usize },

    #[error("duplicate edge id {0} in subset")]
    DuplicateEdge(usize),

    #[error("index {index} out of range for target set of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("regularizer must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("budget {k} exceeds candidate count {candidates}")]
    BudgetTooLarge { k: usize, candidates: usize },

    #[error("budget must be at least 1")]
    EmptyBudget,

    #[error("exhaustive search over {subsets} subsets exceeds the limit of {limit}")]
    SearchTooLarge { subsets: u128, limit: u128 },

    #[error("Gram matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("selected cycle-basis rows are rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("{0}")]
    Parse(#[from] ParseError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

/// A fatal problem found while reading a network or flow file.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("missing metadata key {0}")]
    MissingMetadata(&'static str),

    #[error("declared {declared} links but found {found}")]
    LinkCountMismatch { declared: usize, found: usize },

    #[error("flow rows without a matching edge: {0:?}")]
    UnmatchedFlowRows(Vec<(usize, usize)>),

    #[error("edges without a flow row: {0:?}")]
    MissingFlows(Vec<usize>),
}
