//! Command line, configuration and file formats around `mpcnet-core`.
//!
//! Every command is a plain function returning a [`CliError`] on failure so
//! the binary only maps errors to exit codes.

// `!(x <= limit)` is used on purpose so NaN fails a threshold.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer_file;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod policy_file;

pub use config::RunConfig;
pub use error::{CliError, FormatError};
