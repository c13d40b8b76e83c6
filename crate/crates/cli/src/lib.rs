//! Command-line front end for the torus mean-field-game solvers: JSON run
//! configs with arithmetic expressions for the problem data, CSV/JSON/
//! gnuplot output emission, refinement studies and operator self-checks.

pub mod config;
pub mod expr;
pub mod runner;

use mfg_core::MfgError;

/// CLI failure with its exit-code class: 1 for configuration problems,
/// 2 for numerical failures, 3 for filesystem problems.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Core errors raised while assembling inputs: the user's data is bad.
    pub fn config_from_core(e: MfgError) -> Self {
        CliError::Config(e.to_string())
    }

    /// Core errors raised while solving: the run itself broke down.
    pub fn numerical_from_core(e: MfgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
