use serde::{Deserialize, Serialize};

use super::hearing::{Audiogram, MAX_THRESHOLD_DB};
use crate::error::InvariantError;

/// Ambient scene classes, in their fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    Conversation = 0,
    Noise = 1,
    Quiet = 2,
}

impl SceneClass {
    pub const ALL: [SceneClass; 3] = [SceneClass::Conversation, SceneClass::Noise, SceneClass::Quiet];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Conversation => "conversation",
            SceneClass::Noise => "noise",
            SceneClass::Quiet => "quiet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl std::fmt::Display for SceneClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-6;

/// Posterior probabilities over [`SceneClass`] at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneVector {
    posteriors: Vec<f64>,
    #[serde(default)]
    timestamp_ms: u64,
}

impl SceneVector {
    pub fn new(posteriors: [f64; 3], timestamp_ms: u64) -> Result<Self, InvariantError> {
        let scene = Self { posteriors: posteriors.to_vec(), timestamp_ms };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_slice(posteriors: &[f64], timestamp_ms: u64) -> Result<Self, InvariantError> {
        let scene = Self { posteriors: posteriors.to_vec(), timestamp_ms };
        scene.validate()?;
        Ok(scene)
    }

    pub fn uniform(timestamp_ms: u64) -> Self {
        Self { posteriors: vec![1.0 / 3.0; 3], timestamp_ms }
    }

    /// A scene with all mass on one class.
    pub fn certain(class: SceneClass, timestamp_ms: u64) -> Self {
        let mut posteriors = vec![0.0; 3];
        posteriors[class.index()] = 1.0;
        Self { posteriors, timestamp_ms }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.posteriors.len() != 3 {
            return Err(InvariantError::new(
                "scene vector",
                format!("expected 3 posteriors, got {}", self.posteriors.len()),
            ));
        }
        if let Some(p) = self.posteriors.iter().find(|p| !p.is_finite() || !(0.0..=1.0).contains(*p)) {
            return Err(InvariantError::new("scene vector", format!("posterior {p} outside [0, 1]")));
        }
        let sum: f64 = self.posteriors.iter().sum();
        if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            return Err(InvariantError::new("scene vector", format!("posteriors sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn posteriors(&self) -> [f64; 3] {
        [self.posteriors[0], self.posteriors[1], self.posteriors[2]]
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn dominant(&self) -> SceneClass {
        SceneClass::from_index(argmax(&self.posteriors)).unwrap_or(SceneClass::Conversation)
    }
}

pub const STATE_DIM: usize = 11;

/// Normalized audiogram (thresholds / 120, clamped to [0, 1]) followed by the scene posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
    scene_label: SceneClass,
}

impl StateVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn audiogram_part(&self) -> &[f64] {
        &self.values[..8]
    }

    pub fn scene_part(&self) -> &[f64] {
        &self.values[8..]
    }

    pub fn scene_label(&self) -> SceneClass {
        self.scene_label
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.values.len() != STATE_DIM {
            return Err(InvariantError::new(
                "state vector",
                format!("expected {STATE_DIM} values, got {}", self.values.len()),
            ));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(InvariantError::new("state vector", "entry outside [0, 1]"));
        }
        Ok(())
    }
}

pub fn fuse_state(audiogram: &Audiogram, scene: &SceneVector) -> StateVector {
    let mut values = Vec::with_capacity(STATE_DIM);
    values.extend(
        audiogram
            .thresholds()
            .iter()
            .map(|&db| (db / MAX_THRESHOLD_DB).clamp(0.0, 1.0)),
    );
    values.extend_from_slice(&scene.posteriors);
    StateVector { values, scene_label: scene.dominant() }
}
