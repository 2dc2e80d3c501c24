//! Batch experiment runner for the cone scattering laboratory.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod commands;
pub mod config;
pub mod report;

use std::fmt;

pub use config::Config;
pub use report::{ExperimentReport, Outcome, Table};

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or invalid configuration, or unusable output location.
    Config(String),
    /// A linear solve or eigensolve failed.
    Solver(String),
    /// The run could not establish the property it measures.
    Experiment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Experiment(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Experiment(m) => write!(f, "experiment failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<conelab::Error> for CliError {
    fn from(e: conelab::Error) -> Self {
        use conelab::Error::*;
        let msg = e.to_string();
        match e {
            NotConverged { .. } | NearSingular { .. } | SolverDiverged { .. } => CliError::Solver(msg),
            EmptyFarSpace | WindowTooShort { .. } => CliError::Experiment(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io: {e}"))
    }
}
