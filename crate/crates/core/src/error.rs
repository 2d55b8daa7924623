use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("agent {agent} is out of range (problem has {n_agents} agents)")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("agent {0} does not appear in any factor scope")]
    UncoveredAgent(usize),
    #[error("factor scope {0} is empty")]
    EmptyScope(usize),
    #[error("agent {agent} appears twice in factor scope {factor}")]
    DuplicateAgent { agent: usize, factor: usize },
    #[error("agent {0} is not present in the graph (already eliminated?)")]
    UnknownAgent(usize),
    #[error("agent {0} has an empty action set")]
    NoActions(usize),
    #[error("action {action} is invalid for agent {agent} ({count} actions)")]
    InvalidAction {
        agent: usize,
        action: usize,
        count: usize,
    },
    #[error("elimination order is not a permutation of the agents: {0}")]
    InvalidOrder(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("distribution has no samples")]
    EmptyDistribution,
    #[error("invalid CDF grid: {0}")]
    InvalidGrid(String),
    #[error("grids differ between the compared solutions")]
    GridMismatch,

    #[error("conflicting tags: agent {agent} assigned both {left} and {right}")]
    TagConflict {
        agent: usize,
        left: usize,
        right: usize,
    },
    #[error("missing table entry in factor {factor} for local action {action:?}")]
    MissingEntry { factor: usize, action: Vec<usize> },
    #[error("provider failed for factor {factor}, local action {action:?}: {reason}")]
    Provider {
        factor: usize,
        action: Vec<usize>,
        reason: String,
    },

    #[error("flow model: {0}")]
    Flow(String),
    #[error("non-finite training loss {loss} ({detail})")]
    NonFiniteLoss { loss: f64, detail: String },

    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("environment failure at step {step}: {reason}")]
    Environment { step: u64, reason: String },
    #[error("oracle refused: {joint_actions} joint actions exceed the limit of {limit}; the brute-force oracle is meant for small instances")]
    OracleLimit { joint_actions: u128, limit: u128 },

    #[error("missing checkpoint for factor {factor}: {path}")]
    MissingCheckpoint { factor: usize, path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
