use thiserror::Error;

pub type Result<T> = std::result::Result<T, DkfError>;

#[derive(Debug, Error)]
pub enum DkfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("disconnected after max retries ({0} placements)")]
    Disconnected(usize),

    #[error("unknown topology kind `{0}`")]
    UnknownTopology(String),

    #[error("collectively unobservable")]
    CollectivelyUnobservable,

    #[error("node {node}: pair (A, C) is unobservable")]
    NodeUnobservable { node: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("rank-deficient Q after redraw limit ({0} draws)")]
    RankDeficientQ(usize),

    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),

    #[error("closed-loop block matrix has spectral radius {0:.6} >= 1")]
    Unstable(f64),

    #[error("inconsistent ranges: {0}")]
    InconsistentRange(String),

    #[error("moment predictions need k > n + 3 (k = {k}, n = {n})")]
    TooFewSamples { k: usize, n: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing steady-state solution for `{0}`")]
    MissingSolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DkfError {
    /// Short machine-readable tag, used by the CLI error payload.
    pub fn kind(&self) -> &'static str {
        match self {
            DkfError::InvalidArgument(_) => "invalid_argument",
            DkfError::Disconnected(_) => "disconnected",
            DkfError::UnknownTopology(_) => "unknown_topology",
            DkfError::CollectivelyUnobservable => "collectively_unobservable",
            DkfError::NodeUnobservable { .. } => "node_unobservable",
            DkfError::Asymmetric(_) => "asymmetric",
            DkfError::Singular(_) => "singular",
            DkfError::RankDeficientQ(_) => "rank_deficient_q",
            DkfError::NoConvergence(_) => "no_convergence",
            DkfError::Unstable(_) => "unstable",
            DkfError::InconsistentRange(_) => "inconsistent_range",
            DkfError::TooFewSamples { .. } => "too_few_samples",
            DkfError::Config(_) => "config",
            DkfError::MissingSolution(_) => "missing_solution",
            DkfError::Io(_) => "io",
            DkfError::Json(_) => "json",
            DkfError::Csv(_) => "csv",
        }
    }
}
