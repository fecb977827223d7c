use thiserror::Error;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("malformed model spec: {0}")]
    MalformedSpec(String),

    #[error("children of node {node} have probabilities summing to {sum}, expected 1")]
    ProbabilitySumViolation { node: String, sum: String },

    #[error("node {0} is unreachable from the root")]
    OrphanNode(String),

    #[error("level {level} out of range (model has {n_steps} steps)")]
    LevelOutOfRange { level: usize, n_steps: usize },

    #[error("operation not supported on this model kind: {0}")]
    UnsupportedModelKind(String),

    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),

    #[error("negative reward {value} at node {node}")]
    NegativeReward { node: NodeId, value: String },

    #[error("stopping-time sequence is not pathwise nondecreasing at position {0}")]
    NonMonotoneSequence(usize),

    #[error("reward family was built for a different model")]
    ModelRewardMismatch,

    #[error("Snell result does not match the supplied model or reward")]
    StaleResult,

    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsilonOutOfRange(String),

    #[error("window start exceeds window end on some path")]
    WindowOrderViolation,

    #[error("model has {interior} interior nodes, oracle cap is {cap}")]
    ModelTooLarge { interior: usize, cap: usize },

    #[error("brute-force oracle requires rational arithmetic")]
    FloatModeRejected,

    #[error("regression design matrix is singular at step {0}")]
    SingularRegression(usize),

    #[error("parse error: {0}")]
    Parse(String),
}
