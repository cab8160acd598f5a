//! `cafa` command line. Machine output is JSON on stdout, logs go to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cafa_core::audio::{
    classify_clip, evaluate, load_labels, pool, read_wav, synth::synth_clips, train, write_wav_16bit, AudioError,
    ClassifierModel, EmbeddingMatrix, FileEmbeddings, LabeledEmbedding, LogMelProvider, TrainConfig, EmbeddingProvider,
};
use cafa_core::dialogue::Engine;
use cafa_core::judge::{judge, JudgeInputs, JudgeMode};
use cafa_core::llm::{ChatBackend, RemoteBackend, RemoteConfig, ReplayBackend, RuleBackend};
use cafa_core::model::{Recommendation, SessionTranscript, StrategyBook};
use cafa_core::sim::{generate_scenarios, run_ablation, run_batch, BatchConfig, GeneratorConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, JudgeModeKind, ServiceConfig, DESK_MODEL_JSON};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Data(_) => 2,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<AudioError> for RunError {
    fn from(e: AudioError) -> Self {
        RunError::Data(e.to_string())
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> RunError + '_ {
    move |e| RunError::Data(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "cafa", version, about = "Context-adaptive hearing-aid fitting advisor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the scene classifier on pooled embeddings.
    TrainClassifier(TrainArgs),
    /// Classify a WAV clip or precomputed embeddings.
    Classify(ClassifyArgs),
    /// Run synthetic sessions against virtual users.
    Simulate(SimulateArgs),
    /// Score one finished session.
    Judge(JudgeArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Write a synthetic desk-scale clip set as log-mel embeddings and labels.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Embedding file, one JSON object per line: {"id", "frames"}.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// `id,label` CSV.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Provider recorded in the model: `file`, or `logmel` when the embeddings came from synth-data.
    #[arg(long, default_value = "file")]
    pub provider: String,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["wav", "embedding"])))]
pub struct ClassifyArgs {
    /// Model JSON; the shipped desk model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Embedding file; every clip is classified unless --id picks one.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[arg(long, requires = "embedding")]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 130)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub inconsistency: f64,
    /// Run every scenario with and without the scene parser.
    #[arg(long)]
    pub ablation: bool,
    /// Run with the scene parser disabled (ignored with --ablation).
    #[arg(long)]
    pub no_parser: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub book: Option<PathBuf>,
    #[arg(long, default_value = "deterministic")]
    pub judge_mode: JudgeModeKind,
    /// Replay fixture for the llm judge; otherwise CAFA_LLM_* configure a remote backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long)]
    pub recommendation: PathBuf,
    #[arg(long, default_value = "deterministic")]
    pub mode: JudgeModeKind,
    #[arg(long)]
    pub book: Option<PathBuf>,
    #[arg(long)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each clip as a 16-bit WAV under `{out}/wav/`.
    #[arg(long)]
    pub wav: bool,
}

fn emit<T: Serialize + ?Sized>(out: &mut dyn Write, value: &T) -> Result<(), RunError> {
    let mut line = cafa_core::json::to_string(value);
    line.push('\n');
    out.write_all(line.as_bytes())?;
    Ok(())
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn load_book(path: Option<&Path>) -> Result<StrategyBook, RunError> {
    match path {
        Some(p) => StrategyBook::parse(&read(p)?).map_err(data(&p.display().to_string())),
        None => Ok(StrategyBook::default_book()),
    }
}

fn load_model(path: Option<&Path>) -> Result<ClassifierModel, RunError> {
    match path {
        Some(p) => ClassifierModel::parse(&read(p)?).map_err(data(&p.display().to_string())),
        None => ClassifierModel::parse(DESK_MODEL_JSON).map_err(data("shipped desk model")),
    }
}

fn llm_backend(fixture: Option<&Path>) -> Result<Arc<dyn ChatBackend>, RunError> {
    if let Some(p) = fixture {
        return Ok(Arc::new(ReplayBackend::parse(&read(p)?).map_err(data(&p.display().to_string()))?));
    }
    let cfg = RemoteConfig::from_env()
        .ok_or_else(|| RunError::Usage("llm mode needs --fixture or CAFA_LLM_BASE_URL".into()))?;
    Ok(Arc::new(RemoteBackend::new(cfg)))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    out: String,
    examples: usize,
    final_loss: f64,
    train: &'a cafa_core::audio::EvalReport,
}

fn train_classifier(a: &TrainArgs, out: &mut dyn Write) -> Result<(), RunError> {
    let embeddings = FileEmbeddings::load(&a.embeddings)?;
    let labels = load_labels(&read(&a.labels)?)?;
    let dataset = labels
        .iter()
        .map(|(id, class)| {
            let m = embeddings.get(id).ok_or_else(|| RunError::Data(format!("label for `{id}` has no embedding")))?;
            Ok(LabeledEmbedding::new(pool(m), *class))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    if dataset.is_empty() {
        return Err(RunError::Data("no labelled examples".into()));
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        hidden: a.hidden,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &cfg, &a.provider)?;
    std::fs::write(&a.out, outcome.model.to_json())?;
    let report = evaluate(&outcome.model, &dataset)?;
    emit(out, &TrainSummary { out: a.out.display().to_string(), examples: dataset.len(), final_loss: outcome.final_loss, train: &report })
}

#[derive(Serialize)]
struct Classified<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    class: &'static str,
    posteriors: [f64; 3],
}

fn classify(a: &ClassifyArgs, out: &mut dyn Write) -> Result<(), RunError> {
    let model = load_model(a.model.as_deref())?;
    if let Some(wav) = &a.wav {
        if model.provider != "logmel" {
            return Err(RunError::Data(format!("the model expects `{}` embeddings; use --embedding", model.provider)));
        }
        let clip = read_wav(wav)?;
        let p = classify_clip(&clip, &LogMelProvider::new(), &model)?;
        return emit(out, &Classified { id: None, class: p.class.as_str(), posteriors: p.posteriors });
    }
    let path = a.embedding.as_ref().expect("clap enforces one input");
    let file = FileEmbeddings::load(path)?;
    let selected: Vec<(&str, &EmbeddingMatrix)> = match &a.id {
        Some(id) => vec![(id.as_str(), file.get(id).ok_or_else(|| RunError::Data(format!("no clip `{id}` in {}", path.display())))?)],
        None => file.iter().collect(),
    };
    for (id, m) in selected {
        let p = model.predict(&pool(m))?;
        emit(out, &Classified { id: Some(id), class: p.class.as_str(), posteriors: p.posteriors })?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), RunError> {
    if a.n == 0 {
        return Err(RunError::Usage("--n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&a.inconsistency) {
        return Err(RunError::Usage("--inconsistency must lie in [0, 1]".into()));
    }
    let book = load_book(a.book.as_deref())?;
    let scenarios = generate_scenarios(a.n, a.seed, &book, &GeneratorConfig::default().with_inconsistency(a.inconsistency));
    let engine = Engine::new(Arc::new(book), Arc::new(RuleBackend::new()), Default::default());
    let judge_backend = match a.judge_mode {
        JudgeModeKind::Llm => Some(llm_backend(a.fixture.as_deref())?),
        JudgeModeKind::Deterministic => None,
    };
    let mode = match &judge_backend {
        Some(b) => JudgeMode::Llm(b.as_ref()),
        None => JudgeMode::Deterministic,
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
    }
    let sim_err = |e: cafa_core::sim::SimError| RunError::Data(e.to_string());
    if a.ablation {
        let res = run_ablation(&engine, &scenarios, a.out.as_deref(), mode).map_err(sim_err)?;
        if let Some(dir) = &a.out {
            std::fs::write(dir.join("report.json"), res.report.with_parser.to_json())?;
            std::fs::write(dir.join("report_noparser.json"), res.report.without_parser.to_json())?;
            std::fs::write(dir.join("ablation.json"), cafa_core::json::to_string(&res.report))?;
        }
        return emit(out, &res.report);
    }
    let cfg = BatchConfig { out_dir: a.out.clone(), ..BatchConfig::new(!a.no_parser) };
    let res = run_batch(&engine, &scenarios, &cfg, mode).map_err(sim_err)?;
    if let Some(dir) = &a.out {
        std::fs::write(dir.join("report.json"), res.report.to_json())?;
    }
    emit(out, &res.report)
}

fn judge_cmd(a: &JudgeArgs, out: &mut dyn Write) -> Result<(), RunError> {
    let transcript = SessionTranscript::from_jsonl(&read(&a.transcript)?).map_err(data(&a.transcript.display().to_string()))?;
    let rec = Recommendation::parse(&read(&a.recommendation)?).map_err(data(&a.recommendation.display().to_string()))?;
    let book = load_book(a.book.as_deref())?;
    let template = book
        .get(rec.subproblem)
        .ok_or_else(|| RunError::Data(format!("no template for {}", rec.subproblem.as_str())))?;
    let backend = match a.mode {
        JudgeModeKind::Llm => Some(llm_backend(a.fixture.as_deref())?),
        JudgeModeKind::Deterministic => None,
    };
    let mode = match &backend {
        Some(b) => JudgeMode::Llm(b.as_ref()),
        None => JudgeMode::Deterministic,
    };
    let cfg = cafa_core::dialogue::EngineConfig::default();
    let inputs = JudgeInputs { transcript: &transcript, recommendation: &rec, template, audiogram: Some(&transcript.audiogram) };
    emit(out, &judge(&inputs, mode, &cfg.safety, &cfg.prompts))
}

fn serve_cmd(a: &ServeArgs) -> Result<(), RunError> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::api::serve(config))
}

#[derive(Serialize)]
struct SynthSummary {
    clips: usize,
    embeddings: String,
    labels: String,
}

fn synth_data(a: &SynthArgs, out: &mut dyn Write) -> Result<(), RunError> {
    if a.per_class == 0 {
        return Err(RunError::Usage("--per-class must be at least 1".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    let provider = LogMelProvider::new();
    let clips = synth_clips(a.per_class, a.seed);
    let mut file = FileEmbeddings::default();
    let mut labels = String::from("id,label\n");
    if a.wav {
        std::fs::create_dir_all(a.out.join("wav"))?;
    }
    for (clip, class) in &clips {
        let id = clip.id.clone().expect("synth clips carry ids");
        file.insert(id.clone(), provider.embed(clip)?);
        labels.push_str(&format!("{id},{}\n", class.as_str()));
        if a.wav {
            std::fs::write(a.out.join("wav").join(format!("{id}.wav")), write_wav_16bit(clip)?)?;
        }
    }
    let emb = a.out.join("embeddings.jsonl");
    let lab = a.out.join("labels.csv");
    std::fs::write(&emb, file.to_jsonl())?;
    std::fs::write(&lab, labels)?;
    emit(out, &SynthSummary { clips: clips.len(), embeddings: emb.display().to_string(), labels: lab.display().to_string() })
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), RunError> {
    match &cli.command {
        Command::TrainClassifier(a) => train_classifier(a, out),
        Command::Classify(a) => classify(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Judge(a) => judge_cmd(a, out),
        Command::Serve(a) => serve_cmd(a),
        Command::SynthData(a) => synth_data(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
