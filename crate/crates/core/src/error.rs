use thiserror::Error;

/// Errors raised by the numerical stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: row {row} sums to {sum} (expected 1)")]
    NotStochastic { what: &'static str, row: usize, sum: f64 },

    #[error("{what}: entry {index} is {value}")]
    InvalidEntry { what: &'static str, index: usize, value: f64 },

    #[error("probability vector sums to {sum} (expected 1)")]
    NotNormalized { sum: f64 },

    #[error("{stage} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { stage: &'static str, iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    Singular(&'static str),

    #[error("chain has no unique limiting distribution: {0}")]
    NotErgodic(ErgodicityFailure),

    #[error("lambda numerator nonpositive ({0:e}): the post-change policy is not worse in mode 1")]
    LambdaNumerator(f64),

    #[error("lambda denominator nonpositive ({0:e}): the pre-change policy is not worse in mode 2")]
    LambdaDenominator(f64),

    #[error("impossible transition {from} -> {to}: zero probability in both modes")]
    ImpossibleTransition { from: usize, to: usize },

    #[error("mixing bound violated at start state {state}, horizon {horizon}: gap {gap:e} > bound {bound:e}")]
    MixingBoundViolated { state: usize, horizon: usize, gap: f64, bound: f64 },

    #[error("stopping set of state {state} is not an upper interval of the belief grid")]
    NotUpperInterval { state: usize },

    #[error("switch-rule evaluation exceeded the value cap {cap}")]
    RuleDiverged { cap: f64 },

    #[error("{fraction:e} of episodes never switched before the horizon; use a larger horizon")]
    TruncatedEpisodes { fraction: f64 },
}

/// Which ergodicity check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErgodicityFailure {
    /// More than one closed communicating class.
    Reducible,
    /// A single closed class, but it is periodic.
    Periodic,
}

impl std::fmt::Display for ErgodicityFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErgodicityFailure::Reducible => write!(f, "reducible (several closed classes)"),
            ErgodicityFailure::Periodic => write!(f, "periodic recurrent class"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
