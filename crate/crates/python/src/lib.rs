//! Python bindings: sessions, the scene classifier, the judge and the simulator.
//!
//! Structured results cross the boundary as plain dicts and lists (through the
//! stdlib `json` module); transcripts and recommendations travel as the same
//! JSON text the service and CLI use.

use std::path::PathBuf;
use std::sync::Arc;

use cafa_core::audio::{
    classify_clip, read_wav_bytes, softmax as core_softmax, train, ClassifierModel, LabeledEmbedding, LogMelProvider,
    TrainConfig,
};
use cafa_core::dialogue::{Engine, EngineConfig, SessionState};
use cafa_core::judge::{judge as core_judge, regulate as core_regulate, JudgeInputs, JudgeMode, SafetyConfig};
use cafa_core::llm::{classify_text, RuleBackend};
use cafa_core::model::{Audiogram, Recommendation, SceneClass, SceneVector, SessionTranscript, StrategyBook};
use cafa_core::sim::{generate_scenarios, run_ablation, run_batch, BatchConfig, GeneratorConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

const DESK_MODEL_JSON: &str = include_str!("../../service/data/desk_model.json");

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load_book(path: Option<PathBuf>) -> PyResult<StrategyBook> {
    match path {
        Some(p) => StrategyBook::load(&p).map_err(value_err),
        None => Ok(StrategyBook::default_book()),
    }
}

fn rule_engine(book: StrategyBook, turn_limit: u32) -> Engine {
    let config = EngineConfig { turn_limit, ..EngineConfig::default() };
    Engine::new(Arc::new(book), Arc::new(RuleBackend::new()), config)
}

fn scene_vector(posteriors: &[f64], timestamp_ms: u64) -> PyResult<SceneVector> {
    SceneVector::from_slice(posteriors, timestamp_ms).map_err(value_err)
}

/// Dialogue engine over a strategy book, driven by the offline rule backend.
#[pyclass(name = "Engine", module = "cafa")]
struct PyEngine {
    engine: Engine,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (book=None, turn_limit=10))]
    fn new(book: Option<PathBuf>, turn_limit: u32) -> PyResult<Self> {
        if turn_limit == 0 {
            return Err(PyValueError::new_err("turn_limit must be positive"));
        }
        Ok(Self { engine: rule_engine(load_book(book)?, turn_limit) })
    }

    /// Opens a session. With the parser enabled a scene (three posteriors) is required.
    #[pyo3(signature = (audiogram, scene=None, parser_enabled=true, session_id="py-session"))]
    fn start_session(
        &self,
        audiogram: Vec<f64>,
        scene: Option<Vec<f64>>,
        parser_enabled: bool,
        session_id: &str,
    ) -> PyResult<PySession> {
        let audiogram = Audiogram::from_slice(&audiogram).map_err(value_err)?;
        let scene = scene.map(|p| scene_vector(&p, 0)).transpose()?;
        let state = self.engine.start_session(session_id, audiogram, scene, parser_enabled).map_err(value_err)?;
        Ok(PySession { engine: self.engine.clone(), state })
    }

    fn classify_complaint(&self, text: &str) -> PyResult<String> {
        self.engine.classify_subproblem(text).map(|s| s.as_str().to_string()).map_err(value_err)
    }

    #[getter]
    fn turn_limit(&self) -> u32 {
        self.engine.config().turn_limit
    }
}

/// One fitting conversation.
#[pyclass(name = "Session", module = "cafa")]
struct PySession {
    engine: Engine,
    state: SessionState,
}

#[pymethods]
impl PySession {
    /// Sends one user message and returns the agent turn as a dict.
    fn send<'py>(&mut self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let (next, turn) = self.engine.step(&self.state, text).map_err(value_err)?;
        self.state = next;
        to_py(py, &turn)
    }

    #[pyo3(signature = (posteriors, timestamp_ms=0))]
    fn update_scene(&mut self, posteriors: Vec<f64>, timestamp_ms: u64) -> PyResult<()> {
        let scene = scene_vector(&posteriors, timestamp_ms)?;
        self.state = self.engine.update_scene(&self.state, scene).map_err(value_err)?;
        Ok(())
    }

    #[getter]
    fn id(&self) -> &str {
        &self.state.id
    }

    #[getter]
    fn phase(&self) -> &'static str {
        self.state.phase.label()
    }

    #[getter]
    fn turn(&self) -> u32 {
        self.state.turn
    }

    #[getter]
    fn slots_remaining(&self) -> usize {
        self.state.slots_remaining()
    }

    #[getter]
    fn outcome(&self) -> Option<&'static str> {
        self.state.outcome().map(|o| o.as_str())
    }

    #[getter]
    fn state_vector(&self) -> Vec<f64> {
        self.state.state_vector.values().to_vec()
    }

    /// JSONL transcript, one event per line.
    fn transcript(&self) -> String {
        self.state.transcript.to_jsonl()
    }

    fn recommendation<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.state.recommendation.as_ref().map(|r| to_py(py, r)).transpose()
    }

    /// Deterministic judge report for a delivered session.
    fn judge<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rec = self.state.recommendation.as_ref().ok_or_else(|| PyValueError::new_err("nothing was delivered"))?;
        let template = self.engine.book().get(rec.subproblem).ok_or_else(|| value_err("no template for the subproblem"))?;
        let inputs = JudgeInputs {
            transcript: &self.state.transcript,
            recommendation: rec,
            template,
            audiogram: Some(&self.state.audiogram),
        };
        let config = self.engine.config();
        to_py(py, &core_judge(&inputs, JudgeMode::Deterministic, &config.safety, &config.prompts))
    }
}

/// Three-class ambient scene classifier.
#[pyclass(name = "Classifier", module = "cafa")]
struct PyClassifier {
    model: ClassifierModel,
}

#[derive(Serialize)]
struct Classified {
    class: &'static str,
    posteriors: [f64; 3],
}

#[pymethods]
impl PyClassifier {
    /// The bundled log-mel model trained on synthetic desk clips.
    #[staticmethod]
    fn desk() -> PyResult<Self> {
        Self::from_json(DESK_MODEL_JSON)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ClassifierModel::load(&path).map(|model| Self { model }).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ClassifierModel::parse(text).map(|model| Self { model }).map_err(value_err)
    }

    /// Trains on pooled embeddings with their class labels.
    #[staticmethod]
    #[pyo3(signature = (embeddings, labels, epochs=200, hidden=64, seed=0, provider="file"))]
    fn train(embeddings: Vec<Vec<f64>>, labels: Vec<String>, epochs: usize, hidden: usize, seed: u64, provider: &str) -> PyResult<Self> {
        if embeddings.len() != labels.len() {
            return Err(PyValueError::new_err("embeddings and labels differ in length"));
        }
        let data = embeddings
            .into_iter()
            .zip(&labels)
            .map(|(e, l)| SceneClass::parse(l).map(|c| LabeledEmbedding::new(e, c)).ok_or_else(|| value_err(format!("unknown label {l:?}"))))
            .collect::<PyResult<Vec<_>>>()?;
        let cfg = TrainConfig { epochs, hidden, seed, ..TrainConfig::default() };
        train(&data, &cfg, provider).map(|out| Self { model: out.model }).map_err(value_err)
    }

    fn predict<'py>(&self, py: Python<'py>, embedding: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let p = self.model.predict(&embedding).map_err(value_err)?;
        to_py(py, &Classified { class: p.class.as_str(), posteriors: p.posteriors })
    }

    /// Classifies a WAV file's bytes; needs a model trained on log-mel embeddings.
    fn classify_wav<'py>(&self, py: Python<'py>, wav: &[u8]) -> PyResult<Bound<'py, PyAny>> {
        let clip = read_wav_bytes(wav).map_err(value_err)?;
        let p = py.detach(|| classify_clip(&clip, &LogMelProvider::new(), &self.model)).map_err(value_err)?;
        to_py(py, &Classified { class: p.class.as_str(), posteriors: p.posteriors })
    }

    #[getter]
    fn provider(&self) -> &str {
        &self.model.provider
    }

    #[getter]
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn to_json(&self) -> String {
        self.model.to_json()
    }
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> Vec<f64> {
    core_softmax(&logits)
}

/// Lexicon lookup of a complaint; None when no keyword matches.
#[pyfunction]
fn subproblem_of(text: &str) -> Option<&'static str> {
    classify_text(text).map(|s| s.as_str())
}

/// Scores a transcript (JSONL) and its recommendation (JSON) with the deterministic judge.
#[pyfunction]
#[pyo3(signature = (transcript, recommendation, book=None))]
fn judge<'py>(py: Python<'py>, transcript: &str, recommendation: &str, book: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let transcript = SessionTranscript::from_jsonl(transcript).map_err(value_err)?;
    let rec = Recommendation::parse(recommendation).map_err(value_err)?;
    let book = load_book(book)?;
    let template = book.get(rec.subproblem).ok_or_else(|| value_err(format!("no template for {}", rec.subproblem.as_str())))?;
    let inputs = JudgeInputs { transcript: &transcript, recommendation: &rec, template, audiogram: Some(&transcript.audiogram) };
    let config = EngineConfig::default();
    to_py(py, &core_judge(&inputs, JudgeMode::Deterministic, &config.safety, &config.prompts))
}

/// Runs the shipped safety rules over a recommendation (JSON).
#[pyfunction]
#[pyo3(signature = (recommendation, audiogram=None))]
fn regulate<'py>(py: Python<'py>, recommendation: &str, audiogram: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let rec = Recommendation::parse(recommendation).map_err(value_err)?;
    let audiogram = audiogram.map(|a| Audiogram::from_slice(&a)).transpose().map_err(value_err)?;
    to_py(py, &core_regulate(&rec, audiogram.as_ref(), None, SafetyConfig::shipped()))
}

/// Seeded batch of virtual-user sessions; returns the batch report.
#[pyfunction]
#[pyo3(signature = (n=130, seed=7, inconsistency=0.0, parser_enabled=true, book=None))]
fn simulate<'py>(
    py: Python<'py>,
    n: usize,
    seed: u64,
    inconsistency: f64,
    parser_enabled: bool,
    book: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    if !(0.0..=1.0).contains(&inconsistency) {
        return Err(PyValueError::new_err("inconsistency must lie in [0, 1]"));
    }
    let book = load_book(book)?;
    let report = py.detach(|| {
        let scenarios = generate_scenarios(n, seed, &book, &GeneratorConfig::default().with_inconsistency(inconsistency));
        let engine = rule_engine(book.clone(), cafa_core::dialogue::DEFAULT_TURN_LIMIT);
        run_batch(&engine, &scenarios, &BatchConfig::new(parser_enabled), JudgeMode::Deterministic).map(|o| o.report)
    });
    to_py(py, &report.map_err(value_err)?)
}

/// Both parser arms over the same scenarios.
#[pyfunction]
#[pyo3(signature = (n=130, seed=7, inconsistency=0.0))]
fn ablation<'py>(py: Python<'py>, n: usize, seed: u64, inconsistency: f64) -> PyResult<Bound<'py, PyAny>> {
    if !(0.0..=1.0).contains(&inconsistency) {
        return Err(PyValueError::new_err("inconsistency must lie in [0, 1]"));
    }
    let report = py.detach(|| {
        let book = StrategyBook::default_book();
        let scenarios = generate_scenarios(n, seed, &book, &GeneratorConfig::default().with_inconsistency(inconsistency));
        let engine = rule_engine(book, cafa_core::dialogue::DEFAULT_TURN_LIMIT);
        run_ablation(&engine, &scenarios, None, JudgeMode::Deterministic).map(|o| o.report)
    });
    to_py(py, &report.map_err(value_err)?)
}

#[pymodule]
fn cafa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(subproblem_of, m)?)?;
    m.add_function(wrap_pyfunction!(judge, m)?)?;
    m.add_function(wrap_pyfunction!(regulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ablation, m)?)?;
    m.add("SCENE_CLASSES", SceneClass::ALL.map(|c| c.as_str()).to_vec())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_model_is_logmel() {
        let m = ClassifierModel::parse(DESK_MODEL_JSON).unwrap();
        assert_eq!(m.provider, "logmel");
    }

    #[test]
    fn engine_honours_turn_limit() {
        assert_eq!(rule_engine(StrategyBook::default_book(), 7).config().turn_limit, 7);
        assert!(PyEngine::new(None, 0).is_err());
    }
}
