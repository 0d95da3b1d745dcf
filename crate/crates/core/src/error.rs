use thiserror::Error;

/// Errors raised by the library. Numeric payloads are reported as `f64`
/// regardless of the scalar type used for the computation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("invalid premium principle: {0}")]
    InvalidPrinciple(String),

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("order indeterminate: {0}")]
    IndeterminateOrder(String),

    #[error("quadrature did not converge (estimate {estimate}, error bound {error_bound})")]
    Quadrature { estimate: f64, error_bound: f64 },

    #[error("indemnity outside the admissible contract set: {0}")]
    ContractDomain(String),

    #[error("utility undefined at wealth level {wealth}")]
    UtilityDomain { wealth: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
