//! Configuration, checkpoints, run directories and verification suites for
//! the `mhd` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod report;
pub mod rundir;
pub mod simulate;
pub mod verify;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
