//! Hyperparameter search over integer lattices: Hyperband brackets whose
//! configurations are proposed by a Tree-structured Parzen Estimator.

pub mod hyperband;
pub mod log;
pub mod space;
pub mod study;
pub mod tpe;

pub use hyperband::{hyperband_schedule, Bracket, Rung};
pub use log::{LogRecord, StudyLog};
pub use space::{Dimension, Point, SearchSpace};
pub use study::{run_study, Direction, StudyConfig, StudyState, Trial, TrialStatus};
pub use tpe::{tpe_suggest, Observation, TpeConfig};

use thiserror::Error;

pub type Result<T, E = HpoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    Space(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("study log {path}: {message}")]
    Log { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
