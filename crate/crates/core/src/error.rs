use thiserror::Error;

/// Errors raised by the library. Variants carry enough context to be shown
/// to a CLI user as-is.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative probability {value} in {location}")]
    NegativeProbability { location: String, value: f64 },

    #[error("sum deviation: {location} sums to {sum}")]
    SumDeviation { location: String, sum: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("prior is not full support: entry {index} is {value}")]
    PriorSupport { index: usize, value: f64 },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("every belief has infinite expected KL divergence")]
    AllBeliefsInfinite,

    #[error("infinite KL profile entry for belief {0}")]
    InfiniteProfile(usize),

    #[error("every belief is indifferent between the two actions")]
    AllIndifferent,

    #[error("all log weights are -inf")]
    DegeneratePosterior,

    #[error("support failure at step {step}: no belief assigns positive probability to outcome {outcome} under action {action}")]
    SupportFailure {
        step: usize,
        action: usize,
        outcome: usize,
    },

    #[error("too few switches: need at least {needed}, trajectory has {found}")]
    TooFewSwitches { needed: usize, found: usize },

    #[error("no equilibrium-supporting contract found")]
    NoEquilibrium,

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("reduction failed: {0}")]
    Reduction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
