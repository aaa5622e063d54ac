use std::io;

use bspde::exit_stats::ExitStatsError;
use bspde::expr::ExprError;
use bspde::portfolio::PortfolioError;
use bspde::{ModelError, NonlocalError, OracleError, SimError, SolverError};
use thiserror::Error;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Other = 1,
    Validation = 2,
    Numerical = 3,
    NonConvergence = 4,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("[{section}] {key}: {source}")]
    Expr {
        section: String,
        key: String,
        #[source]
        source: ExprError,
    },
    #[error("[{section}] {key} does not evaluate to a finite value at the smoke-test point {x:?}, t={t}")]
    Smoke { section: String, key: String, x: Vec<f64>, t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Nonlocal(#[from] NonlocalError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    ExitStats(#[from] ExitStatsError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn sim_class(e: &SimError) -> ExitClass {
    match e {
        SimError::NumericalBlowup { .. } => ExitClass::Numerical,
        _ => ExitClass::Validation,
    }
}

fn model_class(e: &ModelError) -> ExitClass {
    match e {
        ModelError::Evaluation { .. } => ExitClass::Numerical,
        _ => ExitClass::Validation,
    }
}

fn solver_class(e: &SolverError) -> ExitClass {
    match e {
        SolverError::Simulation(e) => sim_class(e),
        SolverError::Model(e) => model_class(e),
        SolverError::InterpolationOutOfRange { .. } => ExitClass::Numerical,
        _ => ExitClass::Validation,
    }
}

fn nonlocal_class(e: &NonlocalError) -> ExitClass {
    match e {
        NonlocalError::NoConvergence { .. } => ExitClass::NonConvergence,
        NonlocalError::Solver(e) => solver_class(e),
        _ => ExitClass::Validation,
    }
}

impl CliError {
    pub fn class(&self) -> ExitClass {
        match self {
            Self::Config(_) | Self::Expr { .. } | Self::Smoke { .. } => ExitClass::Validation,
            Self::Model(e) => model_class(e),
            Self::Simulation(e) => sim_class(e),
            Self::Solver(e) => solver_class(e),
            Self::Nonlocal(e) => nonlocal_class(e),
            Self::Oracle(e) => match e {
                OracleError::Instability { .. } => ExitClass::Numerical,
                OracleError::Solver(e) => solver_class(e),
                _ => ExitClass::Validation,
            },
            Self::ExitStats(e) => match e {
                ExitStatsError::Simulation(e) => sim_class(e),
                _ => ExitClass::Validation,
            },
            Self::Portfolio(e) => match e {
                PortfolioError::FieldOutOfRange { .. } => ExitClass::Numerical,
                PortfolioError::Nonlocal(e) => nonlocal_class(e),
                PortfolioError::Model(e) => model_class(e),
                PortfolioError::Solver(e) => solver_class(e),
                PortfolioError::Simulation(e) => sim_class(e),
                _ => ExitClass::Validation,
            },
            Self::Manifest(_) | Self::Io(_) => ExitClass::Other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class() as i32
    }
}
