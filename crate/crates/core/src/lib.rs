//! Context-adaptive hearing-aid fitting advisor.
//!
//! An ambient-scene classifier feeds a slot-filling dialogue engine that turns
//! a user's complaint into a regulated fitting recommendation. Sessions are
//! scored by a five-metric judge and can be batch-simulated against scripted
//! virtual users.

pub mod audio;
pub mod dialogue;
pub mod error;
pub mod json;
pub mod llm;
pub mod judge;
pub mod model;
pub mod prompts;
pub mod sim;

pub use error::{FormatError, InvariantError};
