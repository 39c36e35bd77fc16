//! Alternating first-order search with optional perturbation stabilizers.

mod optim;
mod perturb;
mod run;
mod trajectory;

pub use optim::{Adam, AdamConfig, Sgd, SgdConfig};
pub use perturb::{
    epsilon_at, pgd_delta, pgd_maximize, project_ball, sample_rs_delta, EpsilonSchedule, Norm,
    PerturbationKind, PgdAscent, PgdSettings, PgdStart, METHOD_NAMES,
};
pub use run::{
    arch_step, hessian_penalty, hessian_penalty_gradient, run_search, run_search_observed, weight_step,
    EpochView, SearchConfig, SearchOutcome, TestErrorOracle,
};
pub use trajectory::{FinalRecord, Trajectory, TrajectoryRecord};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::supernet::SupernetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("trajectory parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
