use serde::{Deserialize, Serialize};

use super::AudioError;
use crate::json;
use crate::model::{argmax, SceneClass, SceneVector};

pub const N_CLASSES: usize = 3;

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
}

/// One-hidden-layer ReLU network with a 3-way softmax head.
///
/// Weights are row-major: `w1` is `hidden x dim`, `w2` is `3 x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub provider: String,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub classes: Vec<SceneClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_meta: Option<TrainMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: SceneClass,
    pub posteriors: [f64; 3],
}

impl Prediction {
    pub fn scene(&self, timestamp_ms: u64) -> SceneVector {
        SceneVector::new(self.posteriors, timestamp_ms).unwrap_or_else(|_| SceneVector::uniform(timestamp_ms))
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &ClassifierModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    pub fn buffers(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierModel {
    pub fn zeros(provider: &str, dim: usize, hidden: usize) -> Self {
        Self {
            provider: provider.to_string(),
            dim,
            hidden,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; N_CLASSES * hidden],
            b2: vec![0.0; N_CLASSES],
            classes: SceneClass::ALL.to_vec(),
            train_meta: None,
        }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::InvalidModel(m));
        if self.dim == 0 || self.hidden == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.w1.len() != self.hidden * self.dim || self.b1.len() != self.hidden {
            return bad(format!("first layer shape does not match D={} H={}", self.dim, self.hidden));
        }
        if self.w2.len() != N_CLASSES * self.hidden || self.b2.len() != N_CLASSES {
            return bad(format!("output layer shape does not match H={} with 3 classes", self.hidden));
        }
        if self.classes != SceneClass::ALL {
            return bad("classes must be [conversation, noise, quiet]".into());
        }
        if self.parameters().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return bad("non-finite weight".into());
        }
        Ok(())
    }

    pub fn parameters(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward(&self, e: &[f64]) -> Activations {
        let pre: Vec<f64> = self
            .w1
            .chunks_exact(self.dim)
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        let logits: Vec<f64> = self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(row, b)| row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b)
            .collect();
        let probs = softmax(&logits);
        Activations { pre, hidden, logits, probs }
    }

    pub fn predict(&self, embedding: &[f64]) -> Result<Prediction, AudioError> {
        if embedding.len() != self.dim {
            return Err(AudioError::DimensionMismatch { expected: self.dim, got: embedding.len() });
        }
        let probs = self.forward(embedding).probs;
        Ok(Prediction {
            class: SceneClass::from_index(argmax(&probs)).unwrap_or(SceneClass::Conversation),
            posteriors: [probs[0], probs[1], probs[2]],
        })
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[(&[f64], usize)]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros(self);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut dz = [0.0; N_CLASSES];
        let mut dpre = vec![0.0; self.hidden];
        for &(e, label) in batch {
            let act = self.forward(e);
            let max = act.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + act.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - act.logits[label];
            for c in 0..N_CLASSES {
                dz[c] = (act.probs[c] - if c == label { 1.0 } else { 0.0 }) * scale;
                grads.b2[c] += dz[c];
                let row = &mut grads.w2[c * self.hidden..(c + 1) * self.hidden];
                for (g, h) in row.iter_mut().zip(&act.hidden) {
                    *g += dz[c] * h;
                }
            }
            for j in 0..self.hidden {
                let back: f64 = (0..N_CLASSES).map(|c| self.w2[c * self.hidden + j] * dz[c]).sum();
                dpre[j] = if act.pre[j] > 0.0 { back } else { 0.0 };
            }
            for (j, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.b1[j] += d;
                let row = &mut grads.w1[j * self.dim..(j + 1) * self.dim];
                for (g, x) in row.iter_mut().zip(e) {
                    *g += d * x;
                }
            }
        }
        (loss * scale, grads)
    }

    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    pub fn parse(text: &str) -> Result<Self, AudioError> {
        let model: ClassifierModel = json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AudioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
