use thiserror::Error;

/// A value was well-formed but broke one of its type's invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{context}: {message}")]
pub struct InvariantError {
    pub context: String,
    pub message: String,
}

impl InvariantError {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Self { context: context.into(), message: message.into() }
    }
}

/// Failure reading one of the artifact formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("syntax error at byte {offset} (field `{path}`): {message}")]
    Syntax { offset: usize, path: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    pub fn is_invariant(&self) -> bool {
        matches!(self, FormatError::Invariant(_))
    }
}
