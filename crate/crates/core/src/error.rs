use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes of params, masks, scores, schedules or batches disagree.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid layer spec: {0}")]
    Spec(String),
    #[error("computation tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("finite-difference oracle hit a non-finite loss at coordinate {coordinate}")]
    OracleFailure { coordinate: usize },
    #[error("perturbation step {epsilon:e} vanishes against the parameters")]
    DegenerateStep { epsilon: f64 },
    #[error("selection keeps no weight out of {total}")]
    EmptyNetwork { total: usize },
    #[error("gradient is zero; gradient flow score is undefined")]
    DegenerateFlow,
    #[error("sparsity {sparsity} is infeasible: {reason}")]
    InfeasibleSparsity { sparsity: f64, reason: String },
    #[error("dataset too small: {n} samples")]
    TooSmall { n: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("no checkpoint for epoch {epoch}")]
    MissingCheckpoint { epoch: usize },
    #[error("schema error: {0}")]
    Schema(String),
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Alignment(_) => "alignment",
            Error::Domain(_) => "domain",
            Error::Spec(_) => "spec",
            Error::TapeConsumed => "tape-consumed",
            Error::NonFinite(_) => "non-finite",
            Error::OracleFailure { .. } => "oracle-failure",
            Error::DegenerateStep { .. } => "degenerate-step",
            Error::EmptyNetwork { .. } => "empty-network",
            Error::DegenerateFlow => "degenerate-flow",
            Error::InfeasibleSparsity { .. } => "infeasible-sparsity",
            Error::TooSmall { .. } => "too-small",
            Error::Diverged { .. } => "diverged",
            Error::MissingCheckpoint { .. } => "missing-checkpoint",
            Error::Schema(_) => "schema",
        }
    }
}
