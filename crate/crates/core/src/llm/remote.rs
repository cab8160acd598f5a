use std::io::Read;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmError};

pub const MAX_RESPONSE_BYTES: usize = 1 << 20;
const EXCERPT_BYTES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Sleep before each retry; its length is the retry count.
    #[serde(default = "default_backoff")]
    pub backoff_secs: Vec<f64>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_backoff() -> Vec<f64> {
    vec![0.5, 2.0]
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout_secs: default_timeout(),
            backoff_secs: default_backoff(),
        }
    }

    /// Reads CAFA_LLM_BASE_URL, CAFA_LLM_API_KEY and CAFA_LLM_MODEL.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var("CAFA_LLM_BASE_URL").ok().filter(|s| !s.is_empty())?;
        let model = std::env::var("CAFA_LLM_MODEL").unwrap_or_else(|_| "gpt-4o".to_string());
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var("CAFA_LLM_API_KEY").ok().filter(|s| !s.is_empty());
        Some(cfg)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [super::ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client (blocking).
///
/// The HTTP client is created on first use, so constructing the backend is
/// cheap and safe from any thread.
pub struct RemoteBackend {
    config: RemoteConfig,
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fail(LlmError),
}

fn excerpt(body: &[u8]) -> String {
    let cut = body.len().min(EXCERPT_BYTES);
    String::from_utf8_lossy(&body[..cut]).into_owned()
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config, client: OnceLock::new() }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, LlmError> {
        self.client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs_f64(self.config.timeout_secs))
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| LlmError::Transport(e.clone()))
    }

    fn attempt(&self, body: &[u8], started: Instant) -> Result<Attempt, LlmError> {
        let mut req = self
            .client()?
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry(LlmError::Transport(e.to_string())))
            }
            Err(e) => return Ok(Attempt::Fail(LlmError::Transport(e.to_string()))),
        };
        let status = resp.status();
        if resp.content_length().is_some_and(|n| n as usize > MAX_RESPONSE_BYTES) {
            return Ok(Attempt::Fail(LlmError::ResponseTooLarge { limit: MAX_RESPONSE_BYTES }));
        }
        let mut bytes = Vec::new();
        let read = resp.take(MAX_RESPONSE_BYTES as u64 + 1).read_to_end(&mut bytes);
        if let Err(e) = read {
            return Ok(Attempt::Retry(LlmError::Transport(e.to_string())));
        }
        if bytes.len() > MAX_RESPONSE_BYTES {
            return Ok(Attempt::Fail(LlmError::ResponseTooLarge { limit: MAX_RESPONSE_BYTES }));
        }
        if status.is_server_error() {
            return Ok(Attempt::Retry(LlmError::Http { status: status.as_u16(), body: excerpt(&bytes) }));
        }
        if !status.is_success() {
            return Ok(Attempt::Fail(LlmError::Http { status: status.as_u16(), body: excerpt(&bytes) }));
        }
        let wire: WireResponse =
            serde_json::from_slice(&bytes).map_err(|e| LlmError::Protocol(format!("{e}; body: {}", excerpt(&bytes))))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| LlmError::Protocol("no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(Attempt::Done(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
            backend: self.id().to_string(),
        }))
    }
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = serde_json::to_vec(&WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .map_err(|e| LlmError::Protocol(e.to_string()))?;
        let started = Instant::now();
        let mut waits = self.config.backoff_secs.iter();
        loop {
            match self.attempt(&body, started)? {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => match waits.next() {
                    Some(&secs) => {
                        log::warn!("remote backend: {e}; retrying in {secs} s");
                        std::thread::sleep(Duration::from_secs_f64(secs));
                    }
                    None => return Err(e),
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves one canned (status, body) per connection and records each request.
    fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut payload = vec![0u8; len];
                reader.read_exact(&mut payload).unwrap();
                head.push_str(&String::from_utf8_lossy(&payload));
                seen2.lock().unwrap().push(head);
                let mut stream = stream;
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (format!("http://{addr}/v1"), seen, handle)
    }

    fn ok_body(text: &str) -> String {
        format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{text}"}},"finish_reason":"stop"}}]}}"#)
    }

    fn backend(base: String) -> RemoteBackend {
        let mut cfg = RemoteConfig::new(base, "test-model");
        cfg.api_key = Some("sk-test".into());
        cfg.timeout_secs = 5.0;
        cfg.backoff_secs = vec![0.01, 0.02];
        RemoteBackend::new(cfg)
    }

    #[test]
    fn stub_body_is_returned_without_retries() {
        let (base, seen, handle) = stub(vec![(200, ok_body("noise"))]);
        let resp = backend(base).complete(&ChatRequest::new("classify", "sys", "hello")).unwrap();
        handle.join().unwrap();
        assert_eq!(resp.text, "noise");
        assert_eq!(resp.finish_reason, FinishReason::Stop);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 1);
        assert!(seen[0].starts_with("POST /v1/chat/completions"));
        assert!(seen[0].to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen[0].contains(r#""model":"test-model""#));
        assert!(seen[0].contains(r#""max_tokens":8192"#));
    }

    #[test]
    fn server_errors_are_retried_twice() {
        let (base, seen, handle) = stub(vec![(500, "a".into()), (503, "b".into()), (200, ok_body("ok"))]);
        let resp = backend(base).complete(&ChatRequest::new("t", "s", "u")).unwrap();
        handle.join().unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn persistent_server_error_carries_status_and_body() {
        let (base, _, handle) = stub(vec![(502, "x".into()), (502, "y".into()), (502, "upstream down".into())]);
        let err = backend(base).complete(&ChatRequest::new("t", "s", "u")).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, LlmError::Http { status: 502, ref body } if body == "upstream down"), "{err}");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, seen, handle) = stub(vec![(401, r#"{"error":"bad key"}"#.into())]);
        let err = backend(base).complete(&ChatRequest::new("t", "s", "u")).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, LlmError::Http { status: 401, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn oversized_response_is_rejected() {
        let big = "z".repeat(MAX_RESPONSE_BYTES + 10);
        let (base, _, handle) = stub(vec![(200, big)]);
        let err = backend(base).complete(&ChatRequest::new("t", "s", "u")).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, LlmError::ResponseTooLarge { .. }));
    }

    #[test]
    fn config_defaults() {
        let cfg = RemoteConfig::new("http://h/", "m");
        assert_eq!(cfg.endpoint(), "http://h/chat/completions");
        assert_eq!(cfg.backoff_secs, vec![0.5, 2.0]);
        assert_eq!(cfg.timeout_secs, 30.0);
    }
}
