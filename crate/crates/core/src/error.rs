use thiserror::Error;

/// Errors raised by the lattice, the solvers and the theorem checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time grid: horizon {horizon}, steps {steps}")]
    InvalidGrid { horizon: f64, steps: usize },

    #[error("depth {depth} exceeds the limit {limit} for this operation")]
    DepthExceeded { depth: usize, limit: usize },

    #[error("operands live on different trees")]
    TreeMismatch,

    #[error("operation needs a full binary tree: {0}")]
    RequiresFullBinary(&'static str),

    #[error("contraction condition violated: L*dt = {l} * {dt} >= 1")]
    ContractionViolated { l: f64, dt: f64 },

    #[error("fixed-point iteration did not converge at level {level}, node {node} (residual {residual:e})")]
    NonConvergence {
        level: usize,
        node: usize,
        residual: f64,
    },

    #[error("terminal value {xi} below obstacle {obstacle} at level {level}, node {node}")]
    TerminalBelowObstacle {
        level: usize,
        node: usize,
        xi: f64,
        obstacle: f64,
    },

    #[error("stopping rule order violated: {0}")]
    RuleOrderViolated(&'static str),

    #[error("terminal conditions coincide nodewise, no strict gap")]
    NoStrictGap,

    #[error("input orderings could not be established")]
    OrderingNotEstablished(Box<crate::theorems::ComparisonReport>),

    #[error("stock lattice loses positivity: down factor {factor}")]
    PositivityViolated { factor: f64 },

    #[error("risk-neutral probability out of range: theta*sqrt(dt) = {value}")]
    ProbabilityOutOfRange { value: f64 },

    #[error("objective is not improvable inside the bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("obstacle value {value} exceeds declared bound {bound}")]
    ObstacleAboveBound { value: f64, bound: f64 },

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
