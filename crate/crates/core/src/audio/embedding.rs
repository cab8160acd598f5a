use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::resample::TARGET_RATE;
use super::{AudioClip, AudioError};
use crate::error::InvariantError;
use crate::json;
use crate::model::SceneClass;

/// Frame-level embeddings, row-major `frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, InvariantError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(InvariantError::new("embedding matrix", "needs at least one non-empty frame"));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(InvariantError::new("embedding matrix", "frames have differing dimensions"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(InvariantError::new("embedding matrix", "non-finite entry"));
        }
        Ok(Self { frames: rows.len(), dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Mean over the frame axis.
pub fn pool(frames: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; frames.dim];
    for row in frames.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = frames.frames as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

pub trait EmbeddingProvider: Send + Sync {
    /// Short identifier stored in model metadata (`file`, `logmel`).
    fn name(&self) -> &str;
    fn dim(&self) -> Option<usize>;
    fn embed(&self, clip: &AudioClip) -> Result<EmbeddingMatrix, AudioError>;
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    frames: Vec<Vec<f64>>,
}

/// Precomputed embeddings keyed by clip id.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    order: Vec<String>,
    entries: HashMap<String, EmbeddingMatrix>,
}

impl FileEmbeddings {
    pub fn parse(text: &str) -> Result<Self, AudioError> {
        let mut out = Self::default();
        for (offset, line) in json::jsonl_lines(text) {
            let parsed: EmbeddingLine = json::from_str_at(line, offset)?;
            let matrix = EmbeddingMatrix::from_rows(&parsed.frames)
                .map_err(|e| InvariantError::new(format!("embedding `{}`", parsed.id), e.message))
                .map_err(crate::error::FormatError::from)?;
            if out.entries.insert(parsed.id.clone(), matrix).is_none() {
                out.order.push(parsed.id);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, AudioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, id: impl Into<String>, matrix: EmbeddingMatrix) {
        let id = id.into();
        if self.entries.insert(id.clone(), matrix).is_none() {
            self.order.push(id);
        }
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingMatrix> {
        self.entries.get(id)
    }

    /// Entries in file order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingMatrix)> {
        self.order.iter().map(|id| (id.as_str(), &self.entries[id]))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.iter()
            .map(|(id, m)| {
                let mut line = json::to_string(&EmbeddingLine { id: id.to_string(), frames: m.to_rows() });
                line.push('\n');
                line
            })
            .collect()
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn name(&self) -> &str {
        "file"
    }

    fn dim(&self) -> Option<usize> {
        self.iter().next().map(|(_, m)| m.dim())
    }

    fn embed(&self, clip: &AudioClip) -> Result<EmbeddingMatrix, AudioError> {
        let id = clip.id.as_deref().ok_or_else(|| AudioError::UnknownClip("<unnamed>".into()))?;
        self.get(id).cloned().ok_or_else(|| AudioError::UnknownClip(id.to_string()))
    }
}

/// `id,label` CSV with an optional header row.
pub fn load_labels(text: &str) -> Result<Vec<(String, SceneClass)>, AudioError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| AudioError::Labels { line: i + 1, message: e.to_string() })?;
        if record.len() != 2 {
            return Err(AudioError::Labels { line: i + 1, message: format!("expected 2 fields, got {}", record.len()) });
        }
        if i == 0 && &record[0] == "id" && &record[1] == "label" {
            continue;
        }
        let class = SceneClass::parse(&record[1])
            .ok_or_else(|| AudioError::Labels { line: i + 1, message: format!("unknown label `{}`", &record[1]) })?;
        out.push((record[0].to_string(), class));
    }
    Ok(out)
}

pub const LOG_FLOOR: f64 = 1e-10;

/// 64-band log-mel frames: 25 ms Hann window, 10 ms hop, 125-7500 Hz.
pub struct LogMelProvider {
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelProvider {
    pub const WINDOW: usize = 400;
    pub const HOP: usize = 160;
    pub const FFT_SIZE: usize = 512;
    pub const BANDS: usize = 64;
    pub const MEL_LOW_HZ: f64 = 125.0;
    pub const MEL_HIGH_HZ: f64 = 7500.0;

    pub fn new() -> Self {
        let window = (0..Self::WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / Self::WINDOW as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(Self::FFT_SIZE);
        Self { window, filters: mel_filterbank(), fft }
    }

    pub fn frame_count(samples: usize) -> usize {
        if samples < Self::WINDOW {
            0
        } else {
            (samples - Self::WINDOW) / Self::HOP + 1
        }
    }
}

impl Default for LogMelProvider {
    fn default() -> Self {
        Self::new()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_filterbank() -> Vec<Vec<(usize, f64)>> {
    let bands = LogMelProvider::BANDS;
    let lo = hz_to_mel(LogMelProvider::MEL_LOW_HZ);
    let hi = hz_to_mel(LogMelProvider::MEL_HIGH_HZ);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bins = LogMelProvider::FFT_SIZE / 2 + 1;
    let bin_hz = TARGET_RATE as f64 / LogMelProvider::FFT_SIZE as f64;
    (0..bands)
        .map(|b| {
            let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

impl EmbeddingProvider for LogMelProvider {
    fn name(&self) -> &str {
        "logmel"
    }

    fn dim(&self) -> Option<usize> {
        Some(Self::BANDS)
    }

    fn embed(&self, clip: &AudioClip) -> Result<EmbeddingMatrix, AudioError> {
        clip.validate()?;
        if !clip.is_16k_mono() {
            return Err(AudioError::NotResampled { rate: clip.sample_rate, channels: clip.channels });
        }
        let n_frames = Self::frame_count(clip.samples.len());
        if n_frames == 0 {
            return Err(AudioError::TooShort { needed: Self::WINDOW, got: clip.samples.len() });
        }
        let mut data = Vec::with_capacity(n_frames * Self::BANDS);
        let mut buf = vec![Complex::new(0.0, 0.0); Self::FFT_SIZE];
        for f in 0..n_frames {
            let start = f * Self::HOP;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (s, w)) in clip.samples[start..start + Self::WINDOW].iter().zip(&self.window).enumerate() {
                buf[i].re = *s as f64 * w;
            }
            self.fft.process(&mut buf);
            for filter in &self.filters {
                let energy: f64 = filter.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum();
                data.push(energy.max(LOG_FLOOR).ln());
            }
        }
        Ok(EmbeddingMatrix { frames: n_frames, dim: Self::BANDS, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pool_examples() {
        let single = EmbeddingMatrix::from_rows(&[vec![0.5, -1.0, 3.0]]).unwrap();
        assert_eq!(pool(&single), vec![0.5, -1.0, 3.0]);
        let two = EmbeddingMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(pool(&two), vec![1.0, 1.0]);
    }

    #[test]
    fn pool_matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d = 17;
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let m = EmbeddingMatrix::from_rows(&rows).unwrap();
        let pooled = pool(&m);
        for j in 0..d {
            let mut total = 0.0;
            for row in &rows {
                total += row[j];
            }
            assert!((pooled[j] - total / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logmel_frame_count() {
        let p = LogMelProvider::new();
        let m = p.embed(&AudioClip::mono(vec![0.01; 15_600], 16_000)).unwrap();
        assert_eq!(m.frames(), 96);
        assert_eq!(m.dim(), 64);
        assert_eq!(LogMelProvider::frame_count(15_600), (15_600 - 400) / 160 + 1);
    }

    #[test]
    fn silence_hits_the_floor() {
        let m = LogMelProvider::new().embed(&AudioClip::mono(vec![0.0; 4000], 16_000)).unwrap();
        assert!(m.rows().flatten().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn short_clip_is_an_error() {
        let err = LogMelProvider::new().embed(&AudioClip::mono(vec![0.1; 399], 16_000)).unwrap_err();
        assert!(matches!(err, AudioError::TooShort { needed: 400, got: 399 }));
    }

    #[test]
    fn tone_energy_lands_in_the_right_band() {
        let tone: Vec<f32> = (0..1600)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin() as f32)
            .collect();
        let m = LogMelProvider::new().embed(&AudioClip::mono(tone, 16_000)).unwrap();
        let row = m.row(0);
        let peak = crate::model::argmax(row);
        let edges_mel = (hz_to_mel(125.0), hz_to_mel(7500.0));
        let center = mel_to_hz(edges_mel.0 + (edges_mel.1 - edges_mel.0) * (peak + 1) as f64 / 65.0);
        assert!((center - 1000.0).abs() < 80.0, "peak band centred at {center} Hz");
    }

    #[test]
    fn file_provider_returns_rows_verbatim() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| (0..1024).map(|j| (i * 1024 + j) as f64 * 1e-3).collect()).collect();
        let mut text = json::to_string(&EmbeddingLine { id: "a1".into(), frames: rows.clone() });
        text.push('\n');
        let file = FileEmbeddings::parse(&text).unwrap();
        let m = file.embed(&AudioClip::mono(vec![0.0], 16_000).with_id("a1")).unwrap();
        assert_eq!((m.frames(), m.dim()), (7, 1024));
        assert_eq!(m.to_rows(), rows);
        assert!(matches!(
            file.embed(&AudioClip::mono(vec![0.0], 16_000).with_id("zz")),
            Err(AudioError::UnknownClip(id)) if id == "zz"
        ));
        assert_eq!(FileEmbeddings::parse(&file.to_jsonl()).unwrap().get("a1"), Some(&m));
    }

    #[test]
    fn labels_csv() {
        let labels = load_labels("id,label\na1, noise\nb2,quiet\n").unwrap();
        assert_eq!(labels, vec![("a1".into(), SceneClass::Noise), ("b2".into(), SceneClass::Quiet)]);
        assert!(load_labels("a1,music\n").is_err());
    }
}
