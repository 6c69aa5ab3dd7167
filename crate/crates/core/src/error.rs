use thiserror::Error;

/// Errors produced by the model, market and solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {what}: {value} ({reason})")]
    Domain {
        what: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("infinite congestion has no implied load")]
    InfiniteCongestion,

    #[error("scenario needs at least one provider")]
    NoProviders,

    #[error("congestion vector has {got} entries, expected {expected}")]
    CongestionArity { expected: usize, got: usize },

    #[error("quadrature did not converge: error {error:e} > tolerance {tolerance:e} after {intervals} intervals")]
    Quadrature {
        error: f64,
        tolerance: f64,
        intervals: usize,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("demand bands must partition [0, 1]: {0}")]
    Bands(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(what: &'static str, value: f64, reason: &'static str) -> Error {
    Error::Domain {
        what,
        value,
        reason,
    }
}
