use super::classifier::{ClassifierModel, Prediction};
use super::embedding::{pool, EmbeddingProvider};
use super::resample::{resample_to_16k_mono, TARGET_RATE};
use super::{AudioClip, AudioError};
use crate::model::SceneVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// Window length in 16 kHz samples (0.975 s).
    pub window: usize,
    /// Hop in 16 kHz samples (0.5 s).
    pub hop: usize,
    /// Weight of the newest window in the exponential smoother.
    pub alpha: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { window: 15_600, hop: 8_000, alpha: 0.6 }
    }
}

/// Exponential smoothing of posterior vectors; the first input passes through.
#[derive(Debug, Clone)]
pub struct PosteriorSmoother {
    alpha: f64,
    state: Option<[f64; 3]>,
}

impl PosteriorSmoother {
    pub fn new(alpha: f64) -> Self {
        Self { alpha: alpha.clamp(0.0, 1.0), state: None }
    }

    pub fn update(&mut self, raw: [f64; 3]) -> [f64; 3] {
        let next = match self.state {
            None => raw,
            Some(prev) => {
                let mut s = [0.0; 3];
                for c in 0..3 {
                    s[c] = self.alpha * raw[c] + (1.0 - self.alpha) * prev[c];
                }
                // keep the vector on the simplex despite rounding
                let sum: f64 = s.iter().sum();
                s.map(|v| v / sum)
            }
        };
        self.state = Some(next);
        next
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

type Classify<'a> = Box<dyn FnMut(&AudioClip) -> Result<Prediction, AudioError> + Send + 'a>;

/// Sliding-window classification over time-ordered audio chunks.
///
/// Each emitted vector is stamped with the end of its window in milliseconds
/// since the start of the stream. Samples left over at the end that do not fill
/// a window are never classified.
pub struct SceneStream<'a> {
    config: StreamConfig,
    classify: Classify<'a>,
    smoother: PosteriorSmoother,
    buffer: Vec<f32>,
    /// Absolute index (in 16 kHz samples) of `buffer[0]`.
    offset: u64,
}

impl<'a> SceneStream<'a> {
    pub fn new(
        config: StreamConfig,
        classify: impl FnMut(&AudioClip) -> Result<Prediction, AudioError> + Send + 'a,
    ) -> Self {
        Self {
            smoother: PosteriorSmoother::new(config.alpha),
            config,
            classify: Box::new(classify),
            buffer: Vec::new(),
            offset: 0,
        }
    }

    pub fn with_model(config: StreamConfig, provider: &'a dyn EmbeddingProvider, model: &'a ClassifierModel) -> Self {
        Self::new(config, move |clip| model.predict(&pool(&provider.embed(clip)?)))
    }

    /// Feeds one chunk and returns every scene vector completed by it.
    pub fn push(&mut self, chunk: &AudioClip) -> Result<Vec<SceneVector>, AudioError> {
        let chunk = resample_to_16k_mono(chunk)?;
        self.buffer.extend_from_slice(&chunk.samples);
        let mut out = Vec::new();
        while self.buffer.len() >= self.config.window {
            let window = AudioClip::mono(self.buffer[..self.config.window].to_vec(), TARGET_RATE);
            let raw = (self.classify)(&window)?;
            let smoothed = self.smoother.update(raw.posteriors);
            let end = self.offset + self.config.window as u64;
            let ts = end * 1000 / TARGET_RATE as u64;
            out.push(SceneVector::new(smoothed, ts).unwrap_or_else(|_| SceneVector::uniform(ts)));
            let hop = self.config.hop.min(self.buffer.len());
            self.buffer.drain(..hop);
            self.offset += hop as u64;
        }
        Ok(out)
    }

    /// Feeds every chunk in order and collects the emitted vectors.
    pub fn run<'c>(&mut self, chunks: impl IntoIterator<Item = &'c AudioClip>) -> Result<Vec<SceneVector>, AudioError> {
        let mut all = Vec::new();
        for chunk in chunks {
            all.extend(self.push(chunk)?);
        }
        Ok(all)
    }
}
