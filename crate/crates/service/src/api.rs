//! The v1 HTTP API.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use cafa_core::audio::{classify_clip, pool, read_wav_bytes, ClassifierModel, EmbeddingMatrix, LogMelProvider};
use cafa_core::dialogue::{AgentTurn, Engine, SessionState};
use cafa_core::judge::{judge, JudgeInputs, JudgeMode};
use cafa_core::model::{Audiogram, Recommendation, SceneVector, SessionTranscript};
use futures::stream::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::{JudgeModeKind, Loaded, ServiceConfig};
use crate::error::ApiError;
use crate::store::{Lease, Store};

pub const HEARTBEAT: Duration = Duration::from_secs(15);

pub struct AppState {
    pub engine: Engine,
    pub model: Option<Arc<ClassifierModel>>,
    pub logmel: Arc<LogMelProvider>,
    pub store: Store,
    pub judge_mode: JudgeModeKind,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(loaded: Loaded, config: &ServiceConfig) -> Self {
        Self {
            engine: loaded.engine,
            model: loaded.model,
            logmel: Arc::new(LogMelProvider::new()),
            store: Store::new(config.session_ttl(), config.transcript_dir.clone()),
            judge_mode: config.judge_mode,
        }
    }
}

/// `Json` with rejections turned into the uniform error body.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneInput {
    pub posteriors: Vec<f64>,
    #[serde(default)]
    pub timestamp_ms: Option<u64>,
}

impl SceneInput {
    fn into_scene(self, default_ts: u64) -> Result<SceneVector, ApiError> {
        SceneVector::from_slice(&self.posteriors, self.timestamp_ms.unwrap_or(default_ts))
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene", e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub audiogram: Vec<f64>,
    #[serde(default = "yes")]
    pub parser_enabled: bool,
    #[serde(default)]
    pub scene: Option<SceneInput>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
pub struct Created {
    pub session_id: String,
    pub phase: String,
    pub state_vector: Vec<f64>,
    pub turn_limit: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageIn {
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct MessageOut {
    pub agent_turn: AgentTurn,
    pub phase: String,
    pub slots_remaining: usize,
    pub turn: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SlotView {
    pub id: String,
    pub question: String,
    pub allowed: Vec<String>,
    pub value: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: String,
    pub parser_enabled: bool,
    pub turn: u32,
    pub turn_limit: u32,
    pub subproblem: Option<String>,
    pub state_vector: Vec<f64>,
    pub slots: Vec<SlotView>,
    pub outcome: Option<String>,
    pub recommendation: Option<Recommendation>,
}

fn view(state: &SessionState) -> SessionView {
    let slots = match (&state.template, &state.assignment) {
        (Some(t), Some(a)) => t
            .slots
            .iter()
            .map(|s| SlotView {
                id: s.id.clone(),
                question: s.question.clone(),
                allowed: s.allowed.clone(),
                value: a.get(&s.id).map(str::to_string),
            })
            .collect(),
        _ => Vec::new(),
    };
    SessionView {
        session_id: state.id.clone(),
        phase: state.phase.label().to_string(),
        parser_enabled: state.scene_parser_enabled,
        turn: state.turn,
        turn_limit: state.turn_limit,
        subproblem: state.subproblem.map(|s| s.as_str().to_string()),
        state_vector: state.state_vector.values().to_vec(),
        slots,
        outcome: state.outcome().map(|o| o.as_str().to_string()),
        recommendation: state.recommendation.clone(),
    }
}

async fn create_session(State(app): State<Shared>, ApiJson(body): ApiJson<CreateSession>) -> Result<Response, ApiError> {
    let audiogram = Audiogram::from_slice(&body.audiogram)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_audiogram", e.to_string()))?;
    let scene = body.scene.map(|s| s.into_scene(0)).transpose()?;
    if scene.is_some() && !body.parser_enabled {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "parser_disabled", "a scene was given but the parser is disabled"));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut state = app.engine.open_session(&id, audiogram, body.parser_enabled)?;
    if let Some(scene) = scene {
        state = app.engine.update_scene(&state, scene)?;
    }
    let created = Created {
        session_id: id,
        phase: state.phase.label().to_string(),
        state_vector: state.state_vector.values().to_vec(),
        turn_limit: state.turn_limit,
    };
    app.store.insert(state)?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let lease = app.store.read(&id).await?;
    Ok(Json(view(lease.state())))
}

/// Runs `f` on a worker thread, persists the new log tail, then commits the state.
async fn mutate<T: Send + 'static>(
    app: &Shared,
    mut lease: Lease,
    f: impl FnOnce(&Engine, &SessionState) -> Result<(SessionState, T), ApiError> + Send + 'static,
) -> Result<(Lease, T), ApiError> {
    let app2 = app.clone();
    let current = lease.state().clone();
    let persisted = lease.guard.persisted;
    let (next, extra, persisted) = blocking(move || {
        let (next, extra) = f(&app2.engine, &current)?;
        let persisted = app2
            .store
            .persist(&next, persisted)
            .map_err(|e| ApiError::internal(format!("persisting transcript: {e}")))?;
        Ok((next, extra, persisted))
    })
    .await?;
    lease.guard.state = Some(next);
    lease.guard.persisted = persisted;
    Ok((lease, extra))
}

async fn post_scene(
    State(app): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SceneInput>,
) -> Result<Json<Value>, ApiError> {
    let lease = app.store.lease(&id)?;
    let default_ts = lease.guard.created.elapsed().as_millis() as u64;
    let scene = body.into_scene(default_ts)?;
    let (lease, ()) = mutate(&app, lease, move |engine, state| Ok((engine.update_scene(state, scene)?, ()))).await?;
    let state = lease.state();
    let body = json!({
        "state_vector": state.state_vector.values(),
        "scene": state.state_vector.scene_part(),
        "scene_label": state.state_vector.scene_label().as_str(),
        "phase": state.phase.label(),
    });
    lease.session.publish("scene_update", body.clone());
    Ok(Json(body))
}

async fn post_message(
    State(app): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<MessageIn>,
) -> Result<Json<MessageOut>, ApiError> {
    let lease = app.store.lease(&id)?;
    let (lease, turn) = mutate(&app, lease, move |engine, state| {
        engine.step(state, &body.text).map_err(|e| ApiError::from(e.source))
    })
    .await?;
    let state = lease.state();
    let out = MessageOut {
        agent_turn: turn,
        phase: state.phase.label().to_string(),
        slots_remaining: state.slots_remaining(),
        turn: state.turn,
        outcome: state.outcome().map(|o| o.as_str().to_string()),
    };
    lease.session.publish("agent_turn", serde_json::to_value(&out).unwrap_or(Value::Null));
    if let Some(outcome) = state.outcome() {
        lease.session.publish(
            "session_done",
            json!({ "outcome": outcome.as_str(), "turn": state.turn, "recommendation": state.recommendation }),
        );
    }
    Ok(Json(out))
}

async fn get_transcript(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let lease = app.store.read(&id).await?;
    let body = lease.state().transcript.to_jsonl();
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))], body).into_response())
}

async fn get_events(
    State(app): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = app.store.read(&id).await?.session.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default().event(ev.name).data(ev.data.to_string());
                    return Some((Ok(event), rx));
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("event subscriber lagged by {n}");
                }
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(HEARTBEAT).text("heartbeat")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyIn {
    #[serde(default)]
    pub wav: Option<String>,
    /// A pooled clip embedding.
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    /// Frame-level embeddings, pooled before prediction.
    #[serde(default)]
    pub frames: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize)]
pub struct ClassifyOut {
    pub class: String,
    pub posteriors: [f64; 3],
}

async fn post_classify(State(app): State<Shared>, ApiJson(body): ApiJson<ClassifyIn>) -> Result<Json<ClassifyOut>, ApiError> {
    let model = app
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "no classifier model is loaded"))?;
    let given = [body.wav.is_some(), body.embedding.is_some(), body.frames.is_some()].iter().filter(|x| **x).count();
    if given != 1 {
        return Err(ApiError::invalid("give exactly one of wav, embedding, frames"));
    }
    let logmel = app.logmel.clone();
    let prediction = blocking(move || {
        let audio_err = |e: cafa_core::audio::AudioError| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_audio", e.to_string());
        if let Some(wav) = body.wav {
            if model.provider != "logmel" {
                return Err(ApiError::invalid(format!(
                    "the loaded model expects `{}` embeddings; send embeddings instead of audio",
                    model.provider
                )));
            }
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(wav.trim())
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_audio", format!("base64: {e}")))?;
            let clip = read_wav_bytes(&bytes).map_err(audio_err)?;
            return classify_clip(&clip, logmel.as_ref(), &model).map_err(audio_err);
        }
        let pooled = match (body.embedding, body.frames) {
            (Some(e), _) => e,
            (_, Some(frames)) => pool(&EmbeddingMatrix::from_rows(&frames).map_err(|e| ApiError::invalid(e.to_string()))?),
            _ => unreachable!("checked above"),
        };
        model.predict(&pooled).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_embedding", e.to_string()))
    })
    .await?;
    Ok(Json(ClassifyOut { class: prediction.class.as_str().to_string(), posteriors: prediction.posteriors }))
}

/// A transcript given either as JSON Lines text or as an array of event objects.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TranscriptInput {
    Jsonl(String),
    Events(Vec<Value>),
}

impl TranscriptInput {
    fn parse(self) -> Result<SessionTranscript, ApiError> {
        let text = match self {
            TranscriptInput::Jsonl(s) => s,
            TranscriptInput::Events(events) => events.iter().map(|e| format!("{e}\n")).collect(),
        };
        SessionTranscript::from_jsonl(&text)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_transcript", e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeIn {
    pub transcript: TranscriptInput,
    pub recommendation: Recommendation,
    #[serde(default)]
    pub mode: Option<JudgeModeKind>,
}

async fn post_judge(State(app): State<Shared>, ApiJson(body): ApiJson<JudgeIn>) -> Result<Response, ApiError> {
    let transcript = body.transcript.parse()?;
    let mode = body.mode.unwrap_or(app.judge_mode);
    let app2 = app.clone();
    let report = blocking(move || {
        let engine = &app2.engine;
        let template = engine.book().get(body.recommendation.subproblem).ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_template", "no template for the recommendation's subproblem")
        })?;
        let inputs = JudgeInputs {
            transcript: &transcript,
            recommendation: &body.recommendation,
            template,
            audiogram: Some(&transcript.audiogram),
        };
        let mode = match mode {
            JudgeModeKind::Deterministic => JudgeMode::Deterministic,
            JudgeModeKind::Llm => JudgeMode::Llm(engine.backend()),
        };
        Ok(judge(&inputs, mode, &engine.config().safety, &engine.config().prompts))
    })
    .await?;
    let text = report.to_json();
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], text).into_response())
}

async fn healthz(State(app): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_loaded": app.model.is_some(),
        "book_templates": app.engine.book().templates().len(),
    }))
}

async fn not_found() -> ApiError {
    ApiError::not_found("route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route")
}

pub fn router(app: Shared, cors_allow: &[String]) -> Router {
    let mut r = Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/scene", post(post_scene))
        .route("/v1/sessions/{id}/message", post(post_message))
        .route("/v1/sessions/{id}/transcript", get(get_transcript))
        .route("/v1/sessions/{id}/events", get(get_events))
        .route("/v1/classify", post(post_classify))
        .route("/v1/judge", post(post_judge))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(app);
    if !cors_allow.is_empty() {
        let origins: Vec<HeaderValue> = cors_allow.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        r = r.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    r
}

/// Spawns the idle-session reaper.
pub fn spawn_reaper(app: Shared, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let n = app.store.reap();
            if n > 0 {
                log::info!("expired {n} idle session(s)");
            }
        }
    })
}

pub async fn serve(config: ServiceConfig) -> Result<(), crate::cli::RunError> {
    let loaded = config.load_all()?;
    let app: Shared = Arc::new(AppState::new(loaded, &config));
    let reap_every = config.session_ttl().min(Duration::from_secs(60));
    spawn_reaper(app.clone(), reap_every);
    let addr = format!("{}:{}", config.listen, config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(app, &config.cors_allow))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
