//! In-process session store with per-session single flight, idle expiry and
//! append-only transcript persistence.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use cafa_core::dialogue::SessionState;
use serde_json::Value;
use tokio::sync::{broadcast, Mutex, OwnedMutexGuard};

use crate::error::ApiError;

const EVENT_CAPACITY: usize = 64;

/// One server-push event: its name and JSON payload.
#[derive(Debug, Clone)]
pub struct ServerEvent {
    pub name: &'static str,
    pub data: Value,
}

pub struct Slot {
    /// `None` once the reaper has dropped an expired session.
    pub state: Option<SessionState>,
    /// Number of `state.log` events already on disk.
    pub persisted: usize,
    pub last_active: Instant,
    pub created: Instant,
}

pub struct Session {
    slot: Arc<Mutex<Slot>>,
    events: broadcast::Sender<ServerEvent>,
}

impl Session {
    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }

    pub fn publish(&self, name: &'static str, data: Value) {
        // no subscribers is fine
        let _ = self.events.send(ServerEvent { name, data });
    }
}

/// A held session. Dropping it releases the single-flight gate.
pub struct Lease {
    pub guard: OwnedMutexGuard<Slot>,
    pub session: Arc<Session>,
}

impl Lease {
    pub fn state(&self) -> &SessionState {
        self.guard.state.as_ref().expect("leases are only handed out for live sessions")
    }
}

pub struct Store {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    ttl: Duration,
    transcript_dir: Option<PathBuf>,
}

fn expired_error() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "session_expired", "the session expired after being idle")
}

impl Store {
    pub fn new(ttl: Duration, transcript_dir: Option<PathBuf>) -> Self {
        Self { sessions: RwLock::new(HashMap::new()), ttl, transcript_dir }
    }

    pub fn transcript_path(&self, id: &str) -> Option<PathBuf> {
        self.transcript_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    /// Appends the not-yet-persisted tail of `state.log`. Returns the new persisted count.
    pub fn persist(&self, state: &SessionState, persisted: usize) -> std::io::Result<usize> {
        let Some(path) = self.transcript_path(&state.id) else { return Ok(state.log.len()) };
        append_events(&path, state, persisted)?;
        Ok(state.log.len())
    }

    pub fn insert(&self, state: SessionState) -> Result<Arc<Session>, ApiError> {
        let persisted = self.persist(&state, 0).map_err(|e| ApiError::internal(format!("persisting transcript: {e}")))?;
        let now = Instant::now();
        let (events, _) = broadcast::channel(EVENT_CAPACITY);
        let id = state.id.clone();
        let session = Arc::new(Session {
            slot: Arc::new(Mutex::new(Slot { state: Some(state), persisted, last_active: now, created: now })),
            events,
        });
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(&format!("session `{id}`")))
    }

    fn check_live(&self, guard: &mut OwnedMutexGuard<Slot>) -> Result<(), ApiError> {
        if guard.state.is_none() || guard.last_active.elapsed() > self.ttl {
            guard.state = None;
            return Err(expired_error());
        }
        Ok(())
    }

    /// Single-flight acquisition for mutating requests: a busy session answers 409 at once.
    pub fn lease(&self, id: &str) -> Result<Lease, ApiError> {
        let session = self.get(id)?;
        let mut guard = session.slot.clone().try_lock_owned().map_err(|_| {
            ApiError::new(StatusCode::CONFLICT, "session_busy", "another request for this session is in progress")
        })?;
        self.check_live(&mut guard)?;
        guard.last_active = Instant::now();
        Ok(Lease { guard, session })
    }

    /// Waiting acquisition for reads.
    pub async fn read(&self, id: &str) -> Result<Lease, ApiError> {
        let session = self.get(id)?;
        let mut guard = session.slot.clone().lock_owned().await;
        self.check_live(&mut guard)?;
        Ok(Lease { guard, session })
    }

    /// Drops the state of idle sessions, keeping a tombstone so later requests get 409.
    pub fn reap(&self) -> usize {
        let sessions: Vec<Arc<Session>> =
            self.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        let mut reaped = 0;
        for s in sessions {
            if let Ok(mut guard) = s.slot.clone().try_lock_owned() {
                if guard.state.is_some() && guard.last_active.elapsed() > self.ttl {
                    guard.state = None;
                    reaped += 1;
                }
            }
        }
        reaped
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn append_events(path: &Path, state: &SessionState, from: usize) -> std::io::Result<()> {
    if from >= state.log.len() {
        return Ok(());
    }
    let mut text = String::new();
    for event in &state.log[from..] {
        text.push_str(&event.to_line());
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(text.as_bytes())?;
    file.sync_data()
}
