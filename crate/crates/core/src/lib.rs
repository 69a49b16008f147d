//! Many-to-one matching with contracts under monotone student preferences.
//!
//! Colleges choose from sets of (college, student, term) contracts; students
//! rank contracts and always prefer more dominant terms at the same college.
//! The crate provides deferred acceptance with traces, exhaustive auditors for
//! choice-function axioms, the virtual choice construction, brute-force
//! strategy-proofness checks and an embedding into a salary economy.
//!
//! All exhaustive scans are bounded by [`Caps`].

pub mod audit;
pub mod choice;
pub mod da;
pub mod embed;
pub mod error;
pub mod fixtures;
pub mod mech;
pub mod model;
pub mod profiles;
pub mod subset;
pub mod virtualize;

pub use audit::{AuditReport, Axiom, MaximalMode, Verdict, Witness};
pub use choice::{ChoiceFunction, QuasiLinearValuation, TabulatedChoice};
pub use da::{
    run_da, stability_verdict, BlockWitness, DaTrace, StabilityVerdict, StabilityViolation,
};
pub use error::{Error, Result};
pub use model::{
    Allocation, Caps, CollegeId, Contract, ContractSet, Domain, Market, PreferenceProfile,
    StudentId, StudentPreference, TermLabel, TermOrder,
};
pub use profiles::{Coverage, ProfileSpace};
