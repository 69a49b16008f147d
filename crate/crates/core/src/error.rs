use thiserror::Error;

use crate::model::ContractSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input refers to contracts, colleges or students outside the expected domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural invariant of an input value does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    /// An exhaustive scan would exceed its configured cap.
    #[error("capacity error: {what} has size {size}, cap is {cap}")]
    Capacity { what: String, size: u64, cap: u64 },

    /// A quasi-linear valuation admits two maximizing bundles.
    #[error("genericity error: {0}")]
    Genericity(String),

    /// The maximal observable subset is not unique.
    #[error("ambiguity error: distinct maximal observable subsets {first:?} and {second:?}")]
    Ambiguity {
        first: ContractSet,
        second: ContractSet,
    },

    /// A required axiom does not hold for the input.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("rationalization error: {0}")]
    Rationalization(String),
}

impl Error {
    pub fn capacity(what: impl Into<String>, size: u64, cap: u64) -> Self {
        Error::Capacity {
            what: what.into(),
            size,
            cap,
        }
    }
}
