//! HTTP service and command-line entry points around `cafa-core`.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod store;

pub use api::{router, AppState, Shared};
pub use config::ServiceConfig;
pub use error::{ApiError, ErrorBody};
