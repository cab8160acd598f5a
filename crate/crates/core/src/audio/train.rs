use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierModel, TrainMeta};
use super::AudioError;
use crate::model::SceneClass;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub embedding: Vec<f64>,
    pub label: SceneClass,
}

impl LabeledEmbedding {
    pub fn new(embedding: Vec<f64>, label: SceneClass) -> Self {
        Self { embedding, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 32,
            hidden: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::InvalidConfig(m.to_string()));
        // A zero learning rate is accepted: it returns the initialization untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch_size and hidden must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub final_loss: f64,
    /// Mean minibatch loss of each epoch, measured before that batch's update.
    pub epoch_losses: Vec<f64>,
}

/// He-uniform initialization: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), zero biases.
pub fn initialize(dim: usize, hidden: usize, provider: &str, rng: &mut ChaCha8Rng) -> ClassifierModel {
    let mut model = ClassifierModel::zeros(provider, dim, hidden);
    let limit1 = (6.0 / dim as f64).sqrt();
    model.w1.iter_mut().for_each(|w| *w = rng.gen_range(-limit1..limit1));
    let limit2 = (6.0 / hidden as f64).sqrt();
    model.w2.iter_mut().for_each(|w| *w = rng.gen_range(-limit2..limit2));
    model
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &ClassifierModel) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ClassifierModel, grads: [&[f64]; 4], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, param) in model.parameters_mut().into_iter().enumerate() {
            for (i, p) in param.iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mini-batch Adam on mean cross-entropy. Deterministic for a fixed seed.
pub fn train(dataset: &[LabeledEmbedding], cfg: &TrainConfig, provider: &str) -> Result<TrainOutcome, AudioError> {
    cfg.validate()?;
    for class in SceneClass::ALL {
        if !dataset.iter().any(|x| x.label == class) {
            return Err(AudioError::EmptyClass(class));
        }
    }
    let dim = dataset[0].embedding.len();
    if dim == 0 {
        return Err(AudioError::InvalidConfig("embeddings are empty".into()));
    }
    if let Some(bad) = dataset.iter().find(|x| x.embedding.len() != dim) {
        return Err(AudioError::DimensionMismatch { expected: dim, got: bad.embedding.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initialize(dim, cfg.hidden, provider, &mut rng);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (dataset[i].embedding.as_slice(), dataset[i].label.index()))
                .collect();
            let (loss, grads) = model.loss_and_gradients(&batch);
            if !loss.is_finite() {
                return Err(AudioError::NonFiniteLoss { epoch, batch: b });
            }
            weighted += loss * chunk.len() as f64;
            adam.step(&mut model, grads.buffers(), cfg);
        }
        epoch_losses.push(weighted / dataset.len() as f64);
    }

    let final_loss = *epoch_losses.last().expect("epochs > 0");
    model.train_meta = Some(TrainMeta { seed: cfg.seed, epochs: cfg.epochs, final_loss });
    Ok(TrainOutcome { model, final_loss, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<LabeledEmbedding> {
        vec![
            LabeledEmbedding::new(vec![1.0, 0.0, 0.0], SceneClass::Conversation),
            LabeledEmbedding::new(vec![0.0, 1.0, 0.0], SceneClass::Noise),
            LabeledEmbedding::new(vec![0.0, 0.0, 1.0], SceneClass::Quiet),
        ]
    }

    #[test]
    fn separable_toy_set_is_memorized() {
        let cfg = TrainConfig { epochs: 200, learning_rate: 1e-2, hidden: 8, seed: 4, ..Default::default() };
        let out = train(&toy(), &cfg, "test").unwrap();
        for x in toy() {
            assert_eq!(out.model.predict(&x.embedding).unwrap().class, x.label);
        }
    }

    #[test]
    fn default_learning_rate_also_memorizes() {
        let cfg = TrainConfig { epochs: 200, hidden: 64, seed: 1, ..Default::default() };
        let out = train(&toy(), &cfg, "test").unwrap();
        for x in toy() {
            assert_eq!(out.model.predict(&x.embedding).unwrap().class, x.label);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let cfg = TrainConfig { epochs: 5, learning_rate: 0.0, hidden: 6, seed: 11, ..Default::default() };
        let out = train(&toy(), &cfg, "test").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = initialize(3, 6, "test", &mut rng);
        assert_eq!(out.model.parameters(), init.parameters());
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = TrainConfig { epochs: 20, hidden: 5, seed: 8, batch_size: 2, ..Default::default() };
        let a = train(&toy(), &cfg, "test").unwrap();
        let b = train(&toy(), &cfg, "test").unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn missing_class_is_rejected() {
        let mut data = toy();
        data.pop();
        assert!(matches!(
            train(&data, &TrainConfig::default(), "test"),
            Err(AudioError::EmptyClass(SceneClass::Quiet))
        ));
    }

    #[test]
    fn non_finite_input_reports_position() {
        let mut data = toy();
        // overflows the hidden layer, so the logits become inf - inf
        data[1].embedding = vec![f64::MAX; 3];
        let cfg = TrainConfig { epochs: 3, hidden: 16, ..Default::default() };
        let r = train(&data, &cfg, "test");
        assert!(matches!(r, Err(AudioError::NonFiniteLoss { epoch: 0, batch: 0 })), "{:?}", r.map(|o| o.final_loss));
    }

    #[test]
    fn full_batch_loss_trends_down() {
        let cfg = TrainConfig { epochs: 100, hidden: 16, seed: 2, batch_size: 64, ..Default::default() };
        let out = train(&toy(), &cfg, "test").unwrap();
        let non_increasing = out.epoch_losses.windows(2).filter(|w| w[1] <= w[0]).count();
        // 99 epoch-to-epoch transitions in the first 100 epochs
        assert!(non_increasing >= 95, "{non_increasing} / 99");
    }

    /// Independent loss: plain loops, log-sum-exp written out by hand.
    fn oracle_loss(m: &ClassifierModel, batch: &[(Vec<f64>, usize)]) -> f64 {
        let (d, h) = (m.dim, m.hidden);
        let mut total = 0.0;
        for (e, y) in batch {
            let mut hid = vec![0.0; h];
            for j in 0..h {
                let mut a = m.b1[j];
                for i in 0..d {
                    a += m.w1[j * d + i] * e[i];
                }
                hid[j] = a.max(0.0);
            }
            let mut z = [0.0; 3];
            for c in 0..3 {
                z[c] = m.b2[c];
                for j in 0..h {
                    z[c] += m.w2[c * h + j] * hid[j];
                }
            }
            let mx = z[0].max(z[1]).max(z[2]);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - z[*y];
        }
        total / batch.len() as f64
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = initialize(5, 4, "test", &mut rng);
        let mut model = model;
        model.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        model.b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let batch: Vec<(Vec<f64>, usize)> =
            (0..3).map(|c| ((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(), c)).collect();
        let refs: Vec<(&[f64], usize)> = batch.iter().map(|(e, y)| (e.as_slice(), *y)).collect();
        let (loss, grads) = model.loss_and_gradients(&refs);
        assert!((loss - oracle_loss(&model, &batch)).abs() < 1e-12);

        let h = 1e-4;
        let analytic: Vec<Vec<f64>> = grads.buffers().iter().map(|g| g.to_vec()).collect();
        for k in 0..4 {
            for i in 0..analytic[k].len() {
                let mut plus = model.clone();
                plus.parameters_mut()[k][i] += h;
                let mut minus = model.clone();
                minus.parameters_mut()[k][i] -= h;
                let numeric = (oracle_loss(&plus, &batch) - oracle_loss(&minus, &batch)) / (2.0 * h);
                let a = analytic[k][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "param {k}[{i}]: analytic {a} numeric {numeric}");
            }
        }
    }
}
