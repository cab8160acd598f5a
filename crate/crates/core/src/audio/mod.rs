//! Ambient scene recognition: resample, embed, mean-pool, classify.

mod classifier;
mod embedding;
mod metrics;
mod resample;
mod stream;
pub mod synth;
mod train;
mod wav;

use thiserror::Error;

use crate::error::FormatError;
use crate::model::SceneClass;

pub use classifier::{softmax, ClassifierModel, Gradients, Prediction, TrainMeta};
pub use embedding::{load_labels, pool, EmbeddingMatrix, EmbeddingProvider, FileEmbeddings, LogMelProvider, LOG_FLOOR};
pub use metrics::{evaluate, ClassMetrics, EvalReport};
pub use resample::{resample_to_16k_mono, TARGET_RATE};
pub use stream::{PosteriorSmoother, SceneStream, StreamConfig};
pub use train::{initialize, train, LabeledEmbedding, TrainConfig, TrainOutcome};
pub use wav::{read_wav, read_wav_bytes, write_wav_16bit};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("clip has {got} samples, shorter than one {needed}-sample analysis window")]
    TooShort { needed: usize, got: usize },
    #[error("expected 16 kHz mono input, got {rate} Hz with {channels} channel(s)")]
    NotResampled { rate: u32, channels: u16 },
    #[error("no embeddings for clip `{0}`")]
    UnknownClip(String),
    #[error("embedding dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set has no examples of class `{0}`")]
    EmptyClass(SceneClass),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("label file line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interleaved PCM samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: Option<String>,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioClip {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { id: None, samples, sample_rate, channels: 1 }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if self.samples.is_empty() {
            return Err(AudioError::EmptyClip);
        }
        if self.sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if !(1..=2).contains(&self.channels) {
            return Err(AudioError::InvalidClip(format!("{} channels; only mono and stereo are supported", self.channels)));
        }
        if self.samples.len() % self.channels as usize != 0 {
            return Err(AudioError::InvalidClip("sample count is not a multiple of the channel count".into()));
        }
        Ok(())
    }

    /// Number of sample frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn is_16k_mono(&self) -> bool {
        self.sample_rate == TARGET_RATE && self.channels == 1
    }
}

/// The whole recognition path for one clip: resample, embed, pool, predict.
pub fn classify_clip(
    clip: &AudioClip,
    provider: &dyn EmbeddingProvider,
    model: &ClassifierModel,
) -> Result<Prediction, AudioError> {
    let clip = resample_to_16k_mono(clip)?;
    let frames = provider.embed(&clip)?;
    model.predict(&pool(&frames))
}
