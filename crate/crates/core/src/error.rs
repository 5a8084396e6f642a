use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantile ordering: lower {lower} exceeds upper {upper}")]
    QuantileOrder { lower: f64, upper: f64 },

    #[error("quantile level {0} out of range (0, 1]")]
    LevelOutOfRange(f64),

    #[error("invalid level range: need 0 <= alpha < beta <= 1, got alpha={alpha}, beta={beta}")]
    InvalidRange { alpha: f64, beta: f64 },

    #[error("invalid risk config: {0}")]
    InvalidRiskConfig(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate group: need at least 2 rewards, got {0}")]
    DegenerateGroup(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid step size {0}")]
    InvalidStepSize(f64),

    #[error("unknown question id {id} (bank/policy has {count})")]
    UnknownQuestion { id: usize, count: usize },

    #[error("context length {got} invalid for {kind} policy (expected < {limit})")]
    ContextLength { kind: &'static str, got: usize, limit: usize },

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("response length {got} does not match expected {expected}")]
    ResponseLength { got: usize, expected: usize },

    #[error("answer space of size {size} exceeds enumeration cap {cap}")]
    CapExceeded { size: u128, cap: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid bank: {0}")]
    InvalidBank(String),

    #[error("invalid mixture weights: {0}")]
    InvalidMixture(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("atom collision: {0}")]
    AtomCollision(String),

    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
