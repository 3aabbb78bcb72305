//! File formats, configuration, benchmark harness, and command plumbing for
//! the `nowa` CLI.

pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::{exit_code, CliError, Result};
