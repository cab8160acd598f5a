//! Service configuration: a TOML file plus `CAFA_*` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cafa_core::audio::ClassifierModel;
use cafa_core::dialogue::{Engine, EngineConfig, DEFAULT_TURN_LIMIT};
use cafa_core::judge::SafetyConfig;
use cafa_core::llm::{ChatBackend, RemoteBackend, RemoteConfig, ReplayBackend, RuleBackend};
use cafa_core::model::StrategyBook;
use cafa_core::prompts::Prompts;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The desk-scale scene model trained on synthetic log-mel clips.
pub const DESK_MODEL_JSON: &str = include_str!("../data/desk_model.json");

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_TTL_SECS: f64 = 30.0 * 60.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Rule,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeModeKind {
    #[default]
    Deterministic,
    Llm,
}

impl std::str::FromStr for JudgeModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "llm" => Ok(Self::Llm),
            other => Err(format!("unknown judge mode `{other}` (deterministic, llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Replay fixture (JSON Lines), required for `replay`.
    pub fixture: Option<PathBuf>,
    /// Remote settings; missing fields fall back to the CAFA_LLM_* variables.
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub timeout_secs: Option<f64>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self { kind: BackendKind::Rule, fixture: None, base_url: None, model: None, api_key: None, timeout_secs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub port: u16,
    /// Strategy book JSON; the shipped book when absent.
    pub book: Option<PathBuf>,
    /// Classifier model JSON; the shipped desk model when absent.
    pub model: Option<PathBuf>,
    pub safety: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub language: String,
    pub backend: BackendSettings,
    pub judge_mode: JudgeModeKind,
    pub cors_allow: Vec<String>,
    pub session_ttl_secs: f64,
    pub turn_limit: u32,
    /// Write-ahead transcript directory; transcripts are not persisted when absent.
    pub transcript_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            book: None,
            model: None,
            safety: None,
            prompts_dir: None,
            language: "en".into(),
            backend: BackendSettings::default(),
            judge_mode: JudgeModeKind::Deterministic,
            cors_allow: Vec::new(),
            session_ttl_secs: DEFAULT_TTL_SECS,
            turn_limit: DEFAULT_TURN_LIMIT,
            transcript_dir: None,
        }
    }
}

/// Everything loaded once at startup and shared read-only afterwards.
pub struct Loaded {
    pub engine: Engine,
    pub model: Option<Arc<ClassifierModel>>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read(path)?)
    }

    /// Applies CAFA_PORT, CAFA_BOOK and CAFA_MODEL from `vars`.
    pub fn apply_overrides(&mut self, vars: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        if let Some(port) = vars.get("CAFA_PORT") {
            self.port = port.parse().map_err(|_| ConfigError::Invalid(format!("CAFA_PORT `{port}` is not a port number")))?;
        }
        if let Some(book) = vars.get("CAFA_BOOK") {
            self.book = Some(PathBuf::from(book));
        }
        if let Some(model) = vars.get("CAFA_MODEL") {
            self.model = Some(PathBuf::from(model));
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        let vars = ["CAFA_PORT", "CAFA_BOOK", "CAFA_MODEL"]
            .into_iter()
            .filter_map(|k| std::env::var(k).ok().filter(|v| !v.is_empty()).map(|v| (k.to_string(), v)))
            .collect();
        self.apply_overrides(&vars)
    }

    pub fn session_ttl(&self) -> Duration {
        Duration::from_secs_f64(self.session_ttl_secs)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(ConfigError::Invalid("port must lie in [1, 65535]".into()));
        }
        if !(self.session_ttl_secs.is_finite() && self.session_ttl_secs > 0.0) {
            return Err(ConfigError::Invalid("session_ttl_secs must be positive".into()));
        }
        if self.turn_limit == 0 {
            return Err(ConfigError::Invalid("turn_limit must be positive".into()));
        }
        Ok(())
    }

    fn remote_config(&self) -> Result<RemoteConfig, ConfigError> {
        let b = &self.backend;
        let env = RemoteConfig::from_env();
        let base = b.base_url.clone().or_else(|| env.as_ref().map(|e| e.base_url.clone())).ok_or_else(|| {
            ConfigError::Invalid("remote backend needs backend.base_url or CAFA_LLM_BASE_URL".into())
        })?;
        let model = b
            .model
            .clone()
            .or_else(|| env.as_ref().map(|e| e.model.clone()))
            .unwrap_or_else(|| "gpt-4o".into());
        let mut cfg = RemoteConfig::new(base, model);
        cfg.api_key = b.api_key.clone().or_else(|| env.and_then(|e| e.api_key));
        if let Some(t) = b.timeout_secs {
            cfg.timeout_secs = t;
        }
        Ok(cfg)
    }

    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        Ok(match self.backend.kind {
            BackendKind::Rule => Arc::new(RuleBackend::new()),
            BackendKind::Replay => {
                let path = self
                    .backend
                    .fixture
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("replay backend needs backend.fixture".into()))?;
                Arc::new(ReplayBackend::parse(&read(path)?).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?)
            }
            BackendKind::Remote => Arc::new(RemoteBackend::new(self.remote_config()?)),
        })
    }

    pub fn load_book(&self) -> Result<StrategyBook, ConfigError> {
        match &self.book {
            Some(path) => StrategyBook::parse(&read(path)?).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display()))),
            None => Ok(StrategyBook::default_book()),
        }
    }

    pub fn load_model(&self) -> Result<ClassifierModel, ConfigError> {
        let (text, origin) = match &self.model {
            Some(path) => (read(path)?, path.display().to_string()),
            None => (DESK_MODEL_JSON.to_string(), "shipped desk model".to_string()),
        };
        ClassifierModel::parse(&text).map_err(|e| ConfigError::Invalid(format!("{origin}: {e}")))
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let safety = match &self.safety {
            Some(path) => SafetyConfig::parse(&read(path)?).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?,
            None => SafetyConfig::shipped().clone(),
        };
        let prompts = match &self.prompts_dir {
            Some(dir) => Prompts::load_dir(dir, &self.language).map_err(|source| ConfigError::Read { path: dir.clone(), source })?,
            None => Prompts::default(),
        };
        Ok(EngineConfig { turn_limit: self.turn_limit, prompts, safety, ..EngineConfig::default() })
    }

    /// Loads every referenced artifact; any failure stops startup.
    pub fn load_all(&self) -> Result<Loaded, ConfigError> {
        self.validate()?;
        let book = self.load_book()?;
        let model = self.load_model()?;
        let engine = Engine::new(Arc::new(book), self.build_backend()?, self.engine_config()?);
        if let Some(dir) = &self.transcript_dir {
            std::fs::create_dir_all(dir).map_err(|source| ConfigError::Read { path: dir.clone(), source })?;
        }
        Ok(Loaded { engine, model: Some(Arc::new(model)) })
    }
}
