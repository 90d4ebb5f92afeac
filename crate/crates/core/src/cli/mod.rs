//! Command-line front end: problem files, single solves, hierarchy sweeps,
//! verification runs and machine-readable reports.

mod app;
mod problem_file;
mod run;

use thiserror::Error;

use crate::model::ModelError;

pub use app::{execute, Args, DirectionArg};
pub use problem_file::{
    load_problem, CostSection, DomainSection, DynamicsSection, HorizonSection, ProblemFile, SolverSection, TerminalSection, SCHEMA_VERSION,
};
pub use run::{
    emit_samples, parse_range, run_hierarchy, run_solve, run_verify, Cell, HierarchyTable, OrderReport, RolloutCheck, RolloutOptions,
    RunReport, SolveOptions, VerifyOptions, VerifyReport, TOL_EQ, TOL_PSD, TOL_SANDWICH,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },
    #[error("model validation failed: {0}")]
    Model(#[from] ModelError),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("certificate rejected: {0}")]
    Certificate(String),
    #[error("bound verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Model(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Certificate(_) => 5,
            CliError::Verification(_) => 6,
            CliError::Io(_) => 1,
        }
    }
}
