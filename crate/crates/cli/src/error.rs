//! CLI-side errors and the stable exit-code contract.

use nowa_core::Error as CoreError;
use std::path::Path;
use thiserror::Error;

/// Exit codes: verdicts and failures are machine-readable through the code,
/// never through stdout parsing.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const OPTICS: i32 = 3;
    pub const EMBED: i32 = 4;
    pub const IO: i32 = 5;
    pub const TAMPERED: i32 = 10;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn png(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Format(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit_code::CONFIG,
            CliError::Format(_) => exit_code::CONFIG,
            CliError::Io(_) => exit_code::IO,
            CliError::Core(core) => match core {
                CoreError::PsfClipping { .. }
                | CoreError::DegeneratePsf(_)
                | CoreError::DegenerateOperator(_)
                | CoreError::DegenerateSignature => exit_code::OPTICS,
                CoreError::EmbeddingFailure { .. } => exit_code::EMBED,
                _ => exit_code::CONFIG,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
