use std::path::Path;

use csb_core::csb::FormatError;
use csb_core::pruner::PruneError;
use csb_core::scheduler::SchedError;
use csb_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),

    /// Training or search gave up.
    #[error("{0}")]
    Run(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Format(String),

    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Run(_) => 1,
            CliError::Config(_) => 2,
            CliError::Format(_) => 3,
            CliError::Verify(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<SchedError> for CliError {
    fn from(e: SchedError) -> Self {
        match e {
            SchedError::Parse { .. } => CliError::Format(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Sched(s) => s.into(),
            SimError::Dimension { .. } => CliError::Config(e.to_string()),
            _ => CliError::Verify(e.to_string()),
        }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::Diverged { .. } | PruneError::NoConvergence(_) => CliError::Run(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
