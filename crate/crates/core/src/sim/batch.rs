use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Scenario, SimError, VirtualUser};
use crate::dialogue::{Engine, SessionState, TurnKind};
use crate::judge::{judge, JudgeInputs, JudgeMode};
use crate::llm::{ChatBackend, ChatRequest, TAG_ASK_REPAIR, TAG_ASK_SLOT, TAG_COMPLAINT};
use crate::model::{JudgeReport, Outcome, Recommendation, SessionTranscript, Subproblem};

/// Everything one simulated session produced.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub index: usize,
    pub session_id: String,
    pub truth: Subproblem,
    pub transcript: Option<SessionTranscript>,
    pub outcome: Option<Outcome>,
    pub turns: u32,
    pub repairs: u32,
    pub recommendation: Option<Recommendation>,
    pub judge: Option<JudgeReport>,
    pub error: Option<String>,
}

impl SessionRun {
    pub fn completed(&self) -> bool {
        self.outcome == Some(Outcome::Completed)
    }
}

fn question_loop(engine: &Engine, state: &mut SessionState, user: &dyn ChatBackend, persona: &str) -> Result<u32, String> {
    let complaint = user
        .complete(&ChatRequest::new(TAG_COMPLAINT, persona, "What problem are you having with your hearing aids?"))
        .map_err(|e| e.to_string())?
        .text;
    let (next, mut turn) = engine.step(state, &complaint).map_err(|e| e.to_string())?;
    *state = next;
    let mut repairs = 0;
    // the engine enforces its own limit; this bound only guards against a broken engine
    let guard = state.turn_limit as usize * 2 + 4;
    for _ in 0..guard {
        let tag = match &turn.kind {
            TurnKind::AskSlot { slot } => format!("{TAG_ASK_SLOT}{slot}"),
            TurnKind::AskRepair { slot, .. } => {
                repairs += 1;
                format!("{TAG_ASK_REPAIR}{slot}")
            }
            TurnKind::Deliver { .. } | TurnKind::Abort { .. } => return Ok(repairs),
        };
        let reply = user.complete(&ChatRequest::new(tag, persona, turn.text.clone())).map_err(|e| e.to_string())?;
        let (next, t) = engine.step(state, &reply.text).map_err(|e| e.to_string())?;
        *state = next;
        turn = t;
    }
    Err(format!("session did not terminate within {guard} exchanges"))
}

/// Runs one scenario to its outcome. Failures are captured in the result.
pub fn run_session(
    engine: &Engine,
    scenario: &Scenario,
    session_id: &str,
    parser_enabled: bool,
    user: &dyn ChatBackend,
    persona: &str,
    judge_mode: Option<JudgeMode<'_>>,
) -> SessionRun {
    let mut run = SessionRun {
        index: scenario.index,
        session_id: session_id.to_string(),
        truth: scenario.subproblem,
        transcript: None,
        outcome: None,
        turns: 0,
        repairs: 0,
        recommendation: None,
        judge: None,
        error: None,
    };
    let scene = parser_enabled.then(|| scenario.scene.clone());
    let mut state = match engine.start_session(session_id, scenario.audiogram.clone(), scene, parser_enabled) {
        Ok(s) => s,
        Err(e) => {
            run.error = Some(e.to_string());
            return run;
        }
    };
    match question_loop(engine, &mut state, user, persona) {
        Ok(repairs) => run.repairs = repairs,
        Err(e) => run.error = Some(e),
    }
    run.turns = state.turn;
    run.outcome = state.outcome();
    run.recommendation = state.recommendation.clone();
    if let (Some(mode), Some(rec), Some(sub)) = (judge_mode, &state.recommendation, state.subproblem) {
        if let Some(template) = engine.book().get(sub) {
            let inputs = JudgeInputs {
                transcript: &state.transcript,
                recommendation: rec,
                template,
                audiogram: Some(&state.audiogram),
            };
            run.judge = Some(judge(&inputs, mode, &engine.config().safety, &engine.config().prompts));
        }
    }
    run.transcript = Some(state.transcript);
    run
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

/// Aggregate statistics over one batch. Turn statistics cover every session that ran without error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub n: usize,
    pub parser_enabled: bool,
    pub completed: usize,
    pub completion_rate: f64,
    pub turn_limit_reached: usize,
    pub aborted: usize,
    pub failures: usize,
    pub repairs: u64,
    pub mean_turns: f64,
    pub median_turns: f64,
    pub per_subproblem_mean_turns: BTreeMap<String, f64>,
    pub mean_s_tc: Option<f64>,
    pub mean_s_cs: Option<f64>,
    pub mean_s_pa: Option<f64>,
    pub mean_s_re: Option<f64>,
    pub mean_s_ic: Option<f64>,
    #[serde(default)]
    pub ablation_delta: Option<f64>,
}

impl BatchReport {
    pub fn from_runs(runs: &[SessionRun], parser_enabled: bool) -> Self {
        let ok: Vec<&SessionRun> = runs.iter().filter(|r| r.error.is_none()).collect();
        let turns: Vec<f64> = ok.iter().map(|r| r.turns as f64).collect();
        let count = |o: Outcome| runs.iter().filter(|r| r.outcome == Some(o)).count();
        let mut per_sub = BTreeMap::new();
        for s in Subproblem::ALL {
            let t: Vec<f64> = ok.iter().filter(|r| r.truth == s).map(|r| r.turns as f64).collect();
            if let Some(m) = mean(&t) {
                per_sub.insert(s.as_str().to_string(), m);
            }
        }
        let reports: Vec<&JudgeReport> = runs.iter().filter_map(|r| r.judge.as_ref()).collect();
        let judged = |f: fn(&JudgeReport) -> f64| mean(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let completed = count(Outcome::Completed);
        BatchReport {
            n: runs.len(),
            parser_enabled,
            completed,
            completion_rate: if runs.is_empty() { 0.0 } else { completed as f64 / runs.len() as f64 },
            turn_limit_reached: count(Outcome::TurnLimitReached),
            aborted: count(Outcome::Aborted),
            failures: runs.len() - ok.len(),
            repairs: runs.iter().map(|r| r.repairs as u64).sum(),
            mean_turns: mean(&turns).unwrap_or(0.0),
            median_turns: median(&turns).unwrap_or(0.0),
            per_subproblem_mean_turns: per_sub,
            mean_s_tc: judged(|r| r.s_tc),
            mean_s_cs: judged(|r| r.s_cs),
            mean_s_pa: judged(|r| r.s_pa),
            mean_s_re: judged(|r| r.s_re),
            mean_s_ic: judged(|r| r.s_ic),
            ablation_delta: None,
        }
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string(self)
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub parser_enabled: bool,
    /// Appended to `sim-{index:04}` to form session ids.
    pub id_suffix: String,
    /// Transcripts go to `{out_dir}/transcripts/{session_id}.jsonl`.
    pub out_dir: Option<PathBuf>,
}

impl BatchConfig {
    pub fn new(parser_enabled: bool) -> Self {
        Self { parser_enabled, id_suffix: String::new(), out_dir: None }
    }

    pub fn session_id(&self, index: usize) -> String {
        format!("sim-{index:04}{}", self.id_suffix)
    }
}

pub struct BatchOutput {
    pub report: BatchReport,
    pub runs: Vec<SessionRun>,
}

fn persist(dir: &Path, runs: &[SessionRun]) -> Result<(), SimError> {
    let tdir = dir.join("transcripts");
    std::fs::create_dir_all(&tdir)?;
    for run in runs {
        if let Some(t) = &run.transcript {
            std::fs::write(tdir.join(format!("{}.jsonl", run.session_id)), t.to_jsonl())?;
        }
    }
    Ok(())
}

/// Runs every scenario (in parallel) against its own virtual user; results are ordered by scenario.
pub fn run_batch(engine: &Engine, scenarios: &[Scenario], cfg: &BatchConfig, judge_mode: JudgeMode<'_>) -> Result<BatchOutput, SimError> {
    if scenarios.is_empty() {
        return Err(SimError::Empty);
    }
    let runs: Vec<SessionRun> = scenarios
        .par_iter()
        .map(|s| {
            let user = VirtualUser::with_prompts(s, engine.book().get(s.subproblem), &engine.config().prompts);
            run_session(engine, s, &cfg.session_id(s.index), cfg.parser_enabled, &user, user.persona(), Some(judge_mode))
        })
        .collect();
    if let Some(dir) = &cfg.out_dir {
        persist(dir, &runs)?;
    }
    Ok(BatchOutput { report: BatchReport::from_runs(&runs, cfg.parser_enabled), runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    pub turns_with_parser: u32,
    pub turns_without_parser: u32,
    pub completed_both: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub with_parser: BatchReport,
    pub without_parser: BatchReport,
    pub rows: Vec<AblationRow>,
    /// Mean of turns(without) - turns(with) over scenarios completed in both arms.
    pub mean_delta: Option<f64>,
}

pub struct AblationOutput {
    pub report: AblationReport,
    pub with_parser: Vec<SessionRun>,
    pub without_parser: Vec<SessionRun>,
}

/// Runs the same scenarios with and without the scene parser.
pub fn run_ablation(engine: &Engine, scenarios: &[Scenario], out_dir: Option<&Path>, judge_mode: JudgeMode<'_>) -> Result<AblationOutput, SimError> {
    let with_cfg = BatchConfig { parser_enabled: true, id_suffix: String::new(), out_dir: out_dir.map(Path::to_path_buf) };
    let without_cfg = BatchConfig { parser_enabled: false, id_suffix: "-noparser".into(), out_dir: out_dir.map(Path::to_path_buf) };
    let with = run_batch(engine, scenarios, &with_cfg, judge_mode)?;
    let without = run_batch(engine, scenarios, &without_cfg, judge_mode)?;
    let rows: Vec<AblationRow> = with
        .runs
        .iter()
        .zip(&without.runs)
        .map(|(a, b)| AblationRow {
            index: a.index,
            turns_with_parser: a.turns,
            turns_without_parser: b.turns,
            completed_both: a.completed() && b.completed(),
        })
        .collect();
    let deltas: Vec<f64> = rows
        .iter()
        .filter(|r| r.completed_both)
        .map(|r| r.turns_without_parser as f64 - r.turns_with_parser as f64)
        .collect();
    let mean_delta = mean(&deltas);
    let mut with_report = with.report;
    let mut without_report = without.report;
    with_report.ablation_delta = mean_delta;
    without_report.ablation_delta = mean_delta;
    Ok(AblationOutput {
        report: AblationReport { with_parser: with_report, without_parser: without_report, rows, mean_delta },
        with_parser: with.runs,
        without_parser: without.runs,
    })
}
