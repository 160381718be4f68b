use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid row set: {0}")]
    InvalidRowSet(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("permutations act on different groups (n {n_a} vs {n_b}, fixed rows differ: {fixed_differ})")]
    GroupMismatch {
        n_a: usize,
        n_b: usize,
        fixed_differ: bool,
    },

    #[error(
        "subgroup has {size} elements, above the enumeration cap of {cap}; use sampling instead"
    )]
    EnumerationCap { size: u128, cap: u128 },

    #[error("no paired statistics supplied")]
    EmptyStatistics,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariate of interest lies in the column space of the nuisance design; beta is not identifiable")]
    Unidentifiable,

    #[error("initial shield failed: {fixed} rows fixed (cap {cap}) and collinearity probability {safety:.4} still above {alpha}")]
    ShieldNotReached {
        fixed: usize,
        cap: usize,
        safety: f64,
        alpha: f64,
    },

    #[error("no identifiable design after {attempts} draws")]
    DesignRedrawExhausted { attempts: usize },

    #[error("exact arithmetic requires integer entries; found {0}")]
    NonInteger(f64),

    #[error("integer overflow in exact rank computation")]
    ExactOverflow,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
