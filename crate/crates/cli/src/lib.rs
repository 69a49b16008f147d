//! File formats, reports and command dispatch for the `cmatch` tool.
//!
//! Exit statuses: 0 pass, 1 violation found, 2 usage or validation error,
//! 3 capacity error.

pub mod commands;
pub mod corpus;
pub mod error;
pub mod files;
pub mod report;

pub use commands::{execute, replay, run, Cli};
pub use error::CliError;
pub use files::MarketFile;
pub use report::{Inputs, Invocation, ReportFile};
