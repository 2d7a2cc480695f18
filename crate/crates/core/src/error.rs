use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("form parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("form is not homogeneous: term {term} has degree {found}, expected {expected}")]
    NotHomogeneous { term: String, found: u32, expected: u32 },

    #[error("empty form")]
    EmptyForm,

    #[error("dimension mismatch: expected {expected} coordinates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("modulus must be positive")]
    ZeroModulus,

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("form is not admissible: n = {n}, d = {d} requires n > 2^d (d - 1) = {bound}")]
    Inadmissible { n: usize, d: u32, bound: u64 },

    #[error("work budget exceeded: {needed} evaluations requested, budget {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("density model {model} is undefined at (a, q) = ({a}, {q}): {reason}")]
    ModelDomain {
        model: String,
        a: i128,
        q: u64,
        reason: String,
    },

    #[error("kernel range insufficient: need values up to {needed}, kernel covers {available}")]
    KernelRange { needed: u64, available: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("unknown {kind} `{name}`; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
