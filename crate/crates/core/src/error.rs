use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the analysis and simulation core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its physical domain (negative resistance, zero capacitance, ...).
    Domain(String),
    /// A quantity that must stay finite would be unbounded (for example alpha with a shorted load).
    Unbounded(String),
    /// Inputs are structurally inconsistent (list lengths, indices, unsupported combinations).
    Invalid(String),
    /// A closed-form expression was evaluated at a singular point.
    Degenerate(String),
    /// An iterative solver stopped before reaching its tolerance.
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        last_iterate: Vec<f64>,
    },
    /// A time-domain state went non-finite.
    NonFinite { time: f64, what: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Unbounded(m) => write!(f, "unbounded quantity: {m}"),
            Error::Invalid(m) => write!(f, "invalid input: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate configuration: {m}"),
            Error::NonConvergence { what, iterations, residual, .. } => write!(
                f,
                "{what} did not converge after {iterations} iterations (residual {residual:.3e})"
            ),
            Error::NonFinite { time, what } => write!(f, "non-finite state at t = {time:.6} s: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
