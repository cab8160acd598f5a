//! Session state machine: context, complaint classification, slot filling
//! with rule repair, and the hand-off to the regulator.

mod render;
mod select;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{derive_actions, render_recommendation, RenderContext, DEFAULT_ADAPTATION_DAYS};
pub use select::{match_answer, normalize_answer, select_slot};

use crate::error::InvariantError;
use crate::judge::{regulate, RegulatorVerdict, SafetyConfig};
use crate::llm::{ChatBackend, ChatRequest, LlmError, TAG_CLASSIFY};
use crate::model::{
    fuse_state, Audiogram, DomainRule, Outcome, Recommendation, SceneVector, SessionTranscript, SlotAssignment,
    SlotSpec, Speaker, StateVector, StrategyBook, StrategyTemplate, Subproblem, TranscriptEvent,
};
use crate::prompts::{fill, Prompts};

pub const DEFAULT_TURN_LIMIT: u32 = 10;
pub const DEFAULT_CLASSIFY_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Phase {
    AwaitingContext,
    AwaitingComplaint,
    SlotFilling,
    Repairing { rule: String },
    Regulating,
    Done { outcome: Outcome },
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::AwaitingContext => "awaiting_context",
            Phase::AwaitingComplaint => "awaiting_complaint",
            Phase::SlotFilling => "slot_filling",
            Phase::Repairing { .. } => "repairing",
            Phase::Regulating => "regulating",
            Phase::Done { .. } => "done",
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, Phase::Done { .. })
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Repairing { rule } => write!(f, "repairing({rule})"),
            Phase::Done { outcome } => write!(f, "done({})", outcome.as_str()),
            other => f.write_str(other.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnKind {
    AskSlot { slot: String },
    AskRepair { rule: String, slot: String },
    Deliver { recommendation: Recommendation },
    Abort { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    #[serde(flatten)]
    pub kind: TurnKind,
    pub text: String,
    /// Allowed answers for question turns, empty otherwise.
    #[serde(default)]
    pub options: Vec<String>,
}

impl AgentTurn {
    pub fn slot(&self) -> Option<&str> {
        match &self.kind {
            TurnKind::AskSlot { slot } | TurnKind::AskRepair { slot, .. } => Some(slot),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("refused: {0}")]
    Refusal(String),
    #[error("the scene parser is enabled but no scene was supplied")]
    MissingScene,
    #[error("the scene parser is disabled for this session")]
    ParserDisabled,
    #[error("session closed")]
    SessionClosed,
    #[error("waiting for a scene before the conversation can start")]
    AwaitingContext,
    #[error("the complaint is empty")]
    EmptyComplaint,
    #[error("could not classify the complaint; last response: {raw:?}")]
    Unclassifiable { raw: String },
    #[error("no template for subproblem {0}")]
    NoTemplate(Subproblem),
    #[error("no empty mandatory slot left")]
    NoEmptySlot,
    #[error("invalid scene: {0}")]
    InvalidScene(InvariantError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
}

/// An inner failure tagged with where the session was.
#[derive(Debug, Error)]
#[error("session {session_id} ({phase}): {source}")]
pub struct StepError {
    pub session_id: String,
    pub phase: String,
    #[source]
    pub source: DialogueError,
}

impl StepError {
    fn new(state: &SessionState, source: DialogueError) -> Self {
        Self { session_id: state.id.clone(), phase: state.phase.to_string(), source }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub id: String,
    pub phase: Phase,
    pub audiogram: Audiogram,
    pub state_vector: StateVector,
    pub scene_parser_enabled: bool,
    pub subproblem: Option<Subproblem>,
    /// Selected template, with the context slots appended when the parser is off.
    pub template: Option<StrategyTemplate>,
    pub assignment: Option<SlotAssignment>,
    pub turn: u32,
    pub turn_limit: u32,
    /// Slot the last agent question targeted.
    pub pending_slot: Option<String>,
    pub complaint: Option<String>,
    pub transcript: SessionTranscript,
    /// Transcript events in the order they happened, for append-only persistence.
    pub log: Vec<TranscriptEvent>,
    pub verdict: Option<RegulatorVerdict>,
    pub recommendation: Option<Recommendation>,
}

impl SessionState {
    pub fn slots_remaining(&self) -> usize {
        match (&self.assignment, &self.template) {
            (Some(a), Some(t)) => a.empty_mandatory(t).len(),
            _ => 0,
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.phase {
            Phase::Done { outcome } => Some(outcome),
            _ => None,
        }
    }

    fn push_turn(&mut self, speaker: Speaker, text: &str, slot: Option<&str>) {
        let turn = self.transcript.push_turn(speaker, text, slot).clone();
        self.log.push(TranscriptEvent::Turn(turn));
    }

    fn finish(&mut self, outcome: Outcome, recommendation: Option<Recommendation>) {
        self.phase = Phase::Done { outcome };
        self.pending_slot = None;
        self.transcript.outcome = Some(outcome);
        self.transcript.recommendation = recommendation.clone();
        self.recommendation = recommendation;
        self.log.extend(self.transcript.outcome_event());
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub turn_limit: u32,
    pub classify_retries: u32,
    pub prompts: Prompts,
    pub safety: SafetyConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            turn_limit: DEFAULT_TURN_LIMIT,
            classify_retries: DEFAULT_CLASSIFY_RETRIES,
            prompts: Prompts::default(),
            safety: SafetyConfig::shipped().clone(),
        }
    }
}

/// Shared, immutable session driver. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    book: Arc<StrategyBook>,
    backend: Arc<dyn ChatBackend>,
    config: Arc<EngineConfig>,
}

fn join_options(values: &[String]) -> String {
    values.join(", ")
}

fn ask(spec: &SlotSpec) -> AgentTurn {
    AgentTurn { kind: TurnKind::AskSlot { slot: spec.id.clone() }, text: spec.question.clone(), options: spec.allowed.clone() }
}

fn ask_repair(rule: &DomainRule, spec: &SlotSpec) -> AgentTurn {
    AgentTurn {
        kind: TurnKind::AskRepair { rule: rule.id.clone(), slot: spec.id.clone() },
        text: format!("{} {}", rule.violation_message, spec.question),
        options: spec.allowed.clone(),
    }
}

/// First rule, in template order, whose scope is fully assigned and whose predicate fails.
pub fn first_violation<'t>(template: &'t StrategyTemplate, assignment: &SlotAssignment) -> Option<&'t DomainRule> {
    let lookup = |slot: &str| assignment.get(slot);
    template
        .rules
        .iter()
        .find(|r| assignment.all_assigned(&r.scope) && !r.predicate.eval(&lookup))
}

/// Accepts a bare label or a reply naming exactly one distinct label.
pub fn parse_subproblem(text: &str) -> Option<Subproblem> {
    if let Some(s) = Subproblem::parse(text.trim().trim_end_matches('.')) {
        return Some(s);
    }
    let lower = text.to_lowercase().replace(['-', ' '], "_");
    let found: Vec<Subproblem> = Subproblem::ALL
        .into_iter()
        .filter(|s| {
            let label = s.as_str();
            lower.match_indices(label).any(|(i, _)| {
                let before = lower[..i].chars().next_back();
                let after = lower[i + label.len()..].chars().next();
                !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
            })
        })
        .collect();
    match found.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

impl Engine {
    pub fn new(book: Arc<StrategyBook>, backend: Arc<dyn ChatBackend>, config: EngineConfig) -> Self {
        Self { book, backend, config: Arc::new(config) }
    }

    /// Same book and config, different backend.
    pub fn with_backend(&self, backend: Arc<dyn ChatBackend>) -> Self {
        Self { book: self.book.clone(), backend, config: self.config.clone() }
    }

    pub fn book(&self) -> &StrategyBook {
        &self.book
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &dyn ChatBackend {
        self.backend.as_ref()
    }

    /// A session waiting for its first scene (parser on) or for the complaint (parser off).
    pub fn open_session(&self, id: &str, audiogram: Audiogram, parser_enabled: bool) -> Result<SessionState, DialogueError> {
        audiogram.validate().map_err(|e| DialogueError::Refusal(format!("audiogram required: {e}")))?;
        let uniform = SceneVector::uniform(0);
        let transcript = SessionTranscript::new(id, audiogram.clone(), parser_enabled);
        let log = vec![transcript.header_event()];
        Ok(SessionState {
            id: id.to_string(),
            phase: if parser_enabled { Phase::AwaitingContext } else { Phase::AwaitingComplaint },
            state_vector: fuse_state(&audiogram, &uniform),
            audiogram,
            scene_parser_enabled: parser_enabled,
            subproblem: None,
            template: None,
            assignment: None,
            turn: 0,
            turn_limit: self.config.turn_limit,
            pending_slot: None,
            complaint: None,
            transcript,
            log,
            verdict: None,
            recommendation: None,
        })
    }

    pub fn start_session(
        &self,
        id: &str,
        audiogram: Audiogram,
        scene: Option<SceneVector>,
        parser_enabled: bool,
    ) -> Result<SessionState, DialogueError> {
        let state = self.open_session(id, audiogram, parser_enabled)?;
        match (parser_enabled, scene) {
            (true, Some(scene)) => self.update_scene(&state, scene),
            (true, None) => Err(DialogueError::MissingScene),
            (false, _) => Ok(state),
        }
    }

    /// Fuses a new scene into the state vector; the first one opens the conversation.
    pub fn update_scene(&self, state: &SessionState, scene: SceneVector) -> Result<SessionState, DialogueError> {
        if state.phase.is_done() {
            return Err(DialogueError::SessionClosed);
        }
        if !state.scene_parser_enabled {
            return Err(DialogueError::ParserDisabled);
        }
        scene.validate().map_err(DialogueError::InvalidScene)?;
        let mut next = state.clone();
        next.state_vector = fuse_state(&next.audiogram, &scene);
        next.transcript.scenes.push(scene.clone());
        next.log.push(TranscriptEvent::Scene { scene });
        if next.phase == Phase::AwaitingContext {
            next.phase = Phase::AwaitingComplaint;
        }
        Ok(next)
    }

    pub fn classify_subproblem(&self, complaint: &str) -> Result<Subproblem, DialogueError> {
        if complaint.trim().is_empty() {
            return Err(DialogueError::EmptyComplaint);
        }
        let p = &self.config.prompts;
        let system = fill(&p.classify_system, &BTreeMap::from([("criteria", p.criteria.trim_end().to_string())]));
        let user = fill(&p.classify_user, &BTreeMap::from([("complaint", complaint.trim().to_string())]));
        let request = ChatRequest::new(TAG_CLASSIFY, system, user);
        let mut raw = String::new();
        for attempt in 0..=self.config.classify_retries {
            let reply = self.backend.complete(&request)?;
            if let Some(s) = parse_subproblem(&reply.text) {
                return Ok(s);
            }
            log::debug!("classification attempt {attempt} gave {:?}", reply.text);
            raw = reply.text;
        }
        Err(DialogueError::Unclassifiable { raw })
    }

    /// The single entry point: feeds one user message to the session.
    pub fn step(&self, state: &SessionState, message: &str) -> Result<(SessionState, AgentTurn), StepError> {
        let wrap = |e| StepError::new(state, e);
        match &state.phase {
            Phase::Done { .. } => Err(wrap(DialogueError::SessionClosed)),
            Phase::AwaitingContext => Err(wrap(DialogueError::AwaitingContext)),
            Phase::AwaitingComplaint => self.take_complaint(state, message).map_err(wrap),
            Phase::SlotFilling | Phase::Repairing { .. } => {
                let slot = state.pending_slot.clone().ok_or_else(|| {
                    wrap(InvariantError::new("session state", "slot-filling phase without a pending question").into())
                })?;
                self.apply_answer(state, &slot, message).map_err(wrap)
            }
            Phase::Regulating => {
                Err(wrap(InvariantError::new("session state", "regulating is never left pending").into()))
            }
        }
    }

    fn take_complaint(&self, state: &SessionState, message: &str) -> Result<(SessionState, AgentTurn), DialogueError> {
        let subproblem = self.classify_subproblem(message)?;
        let base = self.book.get(subproblem).ok_or(DialogueError::NoTemplate(subproblem))?;
        let template = if state.scene_parser_enabled { base.clone() } else { base.with_context_slots() };
        let assignment = SlotAssignment::empty(&template);

        let mut next = state.clone();
        next.complaint = Some(message.trim().to_string());
        next.push_turn(Speaker::User, message.trim(), None);
        next.subproblem = Some(subproblem);
        next.transcript.subproblem = Some(subproblem);
        next.log.push(TranscriptEvent::Subproblem { subproblem });

        let turn = ask(select_slot(&assignment, &template)?);
        next.template = Some(template);
        next.assignment = Some(assignment);
        next.phase = Phase::SlotFilling;
        next.pending_slot = turn.slot().map(str::to_string);
        next.push_turn(Speaker::Agent, &turn.text, turn.slot());
        Ok((next, turn))
    }

    /// Records one answer for `slot` and decides the next agent move.
    pub fn apply_answer(
        &self,
        state: &SessionState,
        slot: &str,
        raw: &str,
    ) -> Result<(SessionState, AgentTurn), DialogueError> {
        if !matches!(state.phase, Phase::SlotFilling | Phase::Repairing { .. }) {
            return Err(InvariantError::new("apply_answer", format!("not accepting answers in phase {}", state.phase)).into());
        }
        if state.pending_slot.as_deref() != Some(slot) {
            return Err(InvariantError::new("apply_answer", format!("slot `{slot}` was not asked")).into());
        }
        let template = state.template.clone().ok_or_else(|| InvariantError::new("session state", "no template"))?;
        let spec = template
            .slot(slot)
            .ok_or_else(|| InvariantError::new("apply_answer", format!("unknown slot `{slot}`")))?;

        let mut next = state.clone();
        next.turn += 1;
        next.push_turn(Speaker::User, raw.trim(), Some(slot));
        let matched = match_answer(raw, spec).map(str::to_string);
        let mut assignment = next.assignment.take().unwrap_or_else(|| SlotAssignment::empty(&template));

        let turn = match matched {
            None => {
                if next.turn >= next.turn_limit {
                    next.assignment = Some(assignment);
                    return Ok(self.abort_at_limit(next, &template));
                }
                let mut t = match &state.phase {
                    Phase::Repairing { rule } => {
                        let r = template.rules.iter().find(|r| &r.id == rule).expect("repairing names a template rule");
                        ask_repair(r, spec)
                    }
                    _ => ask(spec),
                };
                t.text = format!("Sorry, I did not catch that. {} Please answer with one of: {}.", spec.question, join_options(&spec.allowed));
                t
            }
            Some(value) => {
                assignment.set(slot, &value, next.turn);
                let violated = first_violation(&template, &assignment).cloned();
                if let Some(rule) = &violated {
                    assignment.clear(&rule.repair_slot);
                }
                if assignment.empty_mandatory(&template).is_empty() {
                    next.assignment = Some(assignment);
                    return Ok(self.regulate_and_close(next, &template));
                }
                if next.turn >= next.turn_limit {
                    next.assignment = Some(assignment);
                    return Ok(self.abort_at_limit(next, &template));
                }
                match violated {
                    Some(rule) => {
                        let repair = template.slot(&rule.repair_slot).expect("repair slot validated in template");
                        next.phase = Phase::Repairing { rule: rule.id.clone() };
                        ask_repair(&rule, repair)
                    }
                    None => {
                        next.phase = Phase::SlotFilling;
                        ask(select_slot(&assignment, &template)?)
                    }
                }
            }
        };
        next.assignment = Some(assignment);
        next.pending_slot = turn.slot().map(str::to_string);
        next.push_turn(Speaker::Agent, &turn.text, turn.slot());
        Ok((next, turn))
    }

    fn abort_at_limit(&self, mut next: SessionState, template: &StrategyTemplate) -> (SessionState, AgentTurn) {
        let missing: Vec<String> = next
            .assignment
            .as_ref()
            .map(|a| a.empty_mandatory(template).iter().map(|s| s.id.clone()).collect())
            .unwrap_or_default();
        let reason = format!(
            "Turn limit of {} reached with {} question(s) still open: {}.",
            next.turn_limit,
            missing.len(),
            missing.join(", ")
        );
        next.push_turn(Speaker::Agent, &reason, None);
        next.finish(Outcome::TurnLimitReached, None);
        let text = reason.clone();
        (next, AgentTurn { kind: TurnKind::Abort { reason }, text, options: vec![] })
    }

    fn regulate_and_close(&self, mut next: SessionState, template: &StrategyTemplate) -> (SessionState, AgentTurn) {
        next.phase = Phase::Regulating;
        let assignment = next.assignment.clone().expect("filled assignment");
        let ctx = RenderContext {
            session_id: &next.id,
            turns: next.turn,
            complaint: next.complaint.as_deref(),
            audiogram: Some(&next.audiogram),
            scene: next.scene_parser_enabled.then(|| next.state_vector.scene_label()),
        };
        let rendered = render_recommendation(template, &assignment, &ctx);
        let rec = match rendered {
            Ok(r) => r,
            Err(e) => {
                let reason = format!("Could not build the recommendation: {e}");
                next.push_turn(Speaker::Agent, &reason, None);
                next.finish(Outcome::Aborted, None);
                return (next.clone(), AgentTurn { kind: TurnKind::Abort { reason: reason.clone() }, text: reason, options: vec![] });
            }
        };
        let verdict = regulate(&rec, Some(&next.audiogram), Some(&next.transcript), &self.config.safety);
        let pass = verdict.pass;
        let summary = verdict.summary();
        next.verdict = Some(verdict);
        if pass {
            next.push_turn(Speaker::Agent, &rec.script, None);
            next.finish(Outcome::Completed, Some(rec.clone()));
            let text = rec.script.clone();
            (next, AgentTurn { kind: TurnKind::Deliver { recommendation: rec }, text, options: vec![] })
        } else {
            let reason = format!("The recommendation was withheld by the safety review: {summary}");
            next.push_turn(Speaker::Agent, &reason, None);
            next.finish(Outcome::Aborted, None);
            (next, AgentTurn { kind: TurnKind::Abort { reason: reason.clone() }, text: reason, options: vec![] })
        }
    }
}

#[cfg(test)]
mod tests;
