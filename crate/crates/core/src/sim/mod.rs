//! Synthetic fitting sessions: scenario generation, a scripted virtual user,
//! batch execution and the scene-parser ablation.

mod batch;
pub mod fuzz;
mod scenario;
mod user;

use thiserror::Error;

pub use batch::{
    run_ablation, run_batch, run_session, AblationOutput, AblationReport, AblationRow, BatchConfig, BatchOutput,
    BatchReport, SessionRun,
};
pub use scenario::{
    complaints_for, context_answers, generate_scenarios, sample_consistent_answers, typical_scene, BandNormal,
    GeneratorConfig, Scenario,
};
pub use user::{repairable_lies, VirtualUser};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no scenarios to run")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
