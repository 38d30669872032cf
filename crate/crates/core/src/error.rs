use std::fmt;

use thiserror::Error;

/// Modelling assumptions a parameter set must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// theta < 1, so the mean-field power solution has a positive denominator.
    ThresholdBelowOne,
    /// theta <= p_max c / (N0 + p_max c) for every positive gain c, so the
    /// minimal power never exceeds the cap.
    PowerCapSufficient,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assumption::ThresholdBelowOne => write!(f, "Assumption 1 (theta < 1)"),
            Assumption::PowerCapSufficient => {
                write!(f, "Assumption 2 (theta <= p_max*c/(N0 + p_max*c))")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{assumption} violated: {detail}")]
    AssumptionViolation {
        assumption: Assumption,
        detail: String,
    },

    #[error("{what} is not a probability distribution: {detail}")]
    NotADistribution { what: String, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("wrong dimensions: {0}")]
    WrongDimensions(String),

    #[error("action k = {k} is infeasible: {reason}")]
    Infeasible { k: usize, reason: String },

    #[error("fluid integration left the simplex: {0}")]
    StepTooLarge(String),

    #[error("bias integral not converged at the cap t = {t_max}")]
    NonConvergent { t_max: f64 },

    #[error("degenerate regime constants: n0_1 = {n0_1} is not below n0_0 = {n0_0}")]
    DegenerateRegime { n0_0: f64, n0_1: f64 },

    #[error("convexity of the equilibrium cost is unverified: N0 = {n0} exceeds f(0) = {bound}")]
    ConvexityUnverified { n0: f64, bound: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },

    #[error("policy induces {classes} closed recurrent classes")]
    MultichainDetected { classes: usize },
}

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepTooLarge(_)
                | Error::NonConvergent { .. }
                | Error::NoConvergence { .. }
                | Error::MultichainDetected { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
