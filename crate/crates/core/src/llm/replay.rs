use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::json;

/// One recorded exchange. Replay keys on `tag` and call order; the digest is kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub tag: String,
    pub request_digest: String,
    pub response_text: String,
}

#[derive(Debug, Default)]
struct Queue {
    responses: Vec<String>,
    cursor: usize,
}

pub struct ReplayBackend {
    queues: Mutex<HashMap<String, Queue>>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut queues: HashMap<String, Queue> = HashMap::new();
        for e in entries {
            queues.entry(e.tag).or_default().responses.push(e.response_text);
        }
        Self { queues: Mutex::new(queues) }
    }

    /// Builds a fixture from (tag, response) pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(pairs.into_iter().map(|(t, r)| FixtureEntry {
            tag: t.to_string(),
            request_digest: String::new(),
            response_text: r.to_string(),
        }))
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let entries = json::jsonl_lines(text)
            .map(|(offset, line)| json::from_str_at::<FixtureEntry>(line, offset))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Responses not yet consumed, over all tags.
    pub fn remaining(&self) -> usize {
        let queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        queues.values().map(|q| q.responses.len() - q.cursor).sum()
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut queues = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        let queue = queues
            .get_mut(&request.tag)
            .filter(|q| q.cursor < q.responses.len())
            .ok_or_else(|| LlmError::ReplayExhausted(request.tag.clone()))?;
        let text = queue.responses[queue.cursor].clone();
        queue.cursor += 1;
        Ok(ChatResponse::stop(text, self.id()))
    }
}
