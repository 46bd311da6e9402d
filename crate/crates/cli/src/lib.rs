//! Pipeline driver behind the `lodsplat` binary.
//!
//! Each command reads a [`manifest::Manifest`], works inside the manifest's
//! run directory and records what it produced in `stage_status.json`.

pub mod commands;
pub mod manifest;
pub mod status;

use std::fmt::Display;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Environment variable that sets the worker-thread count.
pub const WORKERS_ENV: &str = "LODSPLAT_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad manifest, flags or input data.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn is_input_error(e: &lodsplat::Error) -> bool {
    use lodsplat::Error as E;
    matches!(
        e,
        E::InvalidParameter(_) | E::EmptyInput(_) | E::Format { .. } | E::Corrupt(_) | E::Image(_)
    )
}

impl From<lodsplat::Error> for CliError {
    fn from(e: lodsplat::Error) -> Self {
        if is_input_error(&e) {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

/// Adds context to library errors.
pub trait Context<T> {
    /// Any failure counts as bad input (reading user-supplied files).
    fn input_ctx(self, what: impl Display) -> Result<T, CliError>;
    /// Keeps the library's classification.
    fn ctx(self, what: impl Display) -> Result<T, CliError>;
}

impl<T> Context<T> for lodsplat::Result<T> {
    fn input_ctx(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Input(format!("{what}: {e}")))
    }

    fn ctx(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| {
            let input = is_input_error(&e);
            let msg = format!("{what}: {e}");
            if input {
                CliError::Input(msg)
            } else {
                CliError::Internal(msg)
            }
        })
    }
}

/// Sizes the global rayon pool from [`WORKERS_ENV`] when set.
pub fn configure_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::input(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(format!("worker pool: {e}")))
}
