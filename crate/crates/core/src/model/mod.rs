//! Domain types shared by every part of the advisor.

mod hearing;
mod report;
mod scene;
mod session;
mod strategy;

pub use hearing::{severity_of, Audiogram, Severity, FREQUENCIES_HZ, MAX_THRESHOLD_DB, MIN_THRESHOLD_DB, PTA_FREQUENCIES_HZ};
pub use report::JudgeReport;
pub use scene::{argmax, fuse_state, SceneClass, SceneVector, StateVector, POSTERIOR_SUM_TOLERANCE, STATE_DIM};
pub use session::{
    Outcome, Payload, Provenance, Recommendation, SessionTranscript, SlotAssignment, Speaker, TranscriptEvent,
    TurnRecord,
};
pub use strategy::{
    ActionRow, DomainRule, Predicate, SlotSpec, StrategyBook, StrategyTemplate, Subproblem, CONTEXT_SLOT_LOUDNESS,
    CONTEXT_SLOT_TYPE, SLOTS_PER_TEMPLATE,
};
