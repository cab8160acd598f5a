use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::replay::FixtureEntry;
use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::json;

/// Clonable in-memory sink.
#[derive(Debug, Clone, Default)]
pub struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap_or_else(|e| e.into_inner())).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Pass-through wrapper that appends every exchange to a replay fixture.
pub struct RecordingBackend<B> {
    inner: B,
    id: String,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, sink: impl Write + Send + 'static) -> Self {
        let id = format!("record({})", inner.id());
        Self { inner, id, sink: Mutex::new(Box::new(sink)) }
    }

    /// Creates (truncates) `path`; an unused recorder leaves an empty, valid fixture.
    pub fn to_file(inner: B, path: &Path) -> Result<Self, LlmError> {
        let file = File::create(path).map_err(LlmError::Sink)?;
        Ok(Self::new(inner, BufWriter::new(file)))
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let entry = FixtureEntry {
            tag: request.tag.clone(),
            request_digest: request.digest(),
            response_text: response.text.clone(),
        };
        let mut line = json::to_vec(&entry);
        line.push(b'\n');
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        sink.write_all(&line).and_then(|_| sink.flush()).map_err(LlmError::Sink)?;
        Ok(response)
    }
}
