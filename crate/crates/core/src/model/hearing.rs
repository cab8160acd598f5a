use serde::{Deserialize, Serialize};

use crate::error::InvariantError;

/// Audiometric frequency ladder, in Hz. Thresholds are always stored in this order.
pub const FREQUENCIES_HZ: [u32; 8] = [250, 500, 1000, 2000, 3000, 4000, 6000, 8000];

pub const MIN_THRESHOLD_DB: f64 = -10.0;
pub const MAX_THRESHOLD_DB: f64 = 120.0;

/// Bands averaged for the pure-tone average.
pub const PTA_FREQUENCIES_HZ: [u32; 4] = [500, 1000, 2000, 4000];

/// Hearing thresholds in dB HL, one per entry of [`FREQUENCIES_HZ`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Audiogram {
    thresholds: Vec<f64>,
}

impl Audiogram {
    pub fn new(thresholds: [f64; 8]) -> Result<Self, InvariantError> {
        let audiogram = Self { thresholds: thresholds.to_vec() };
        audiogram.validate()?;
        Ok(audiogram)
    }

    pub fn from_slice(thresholds: &[f64]) -> Result<Self, InvariantError> {
        let audiogram = Self { thresholds: thresholds.to_vec() };
        audiogram.validate()?;
        Ok(audiogram)
    }

    pub fn uniform(level_db: f64) -> Result<Self, InvariantError> {
        Self::new([level_db; 8])
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.thresholds.len() != FREQUENCIES_HZ.len() {
            return Err(InvariantError::new(
                "audiogram",
                format!("expected 8 thresholds, got {}", self.thresholds.len()),
            ));
        }
        for (hz, &db) in FREQUENCIES_HZ.iter().zip(&self.thresholds) {
            if !db.is_finite() || !(MIN_THRESHOLD_DB..=MAX_THRESHOLD_DB).contains(&db) {
                return Err(InvariantError::new(
                    "audiogram",
                    format!("threshold at {hz} Hz is {db} dB HL, outside [-10, 120]"),
                ));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn threshold_at(&self, hz: u32) -> Option<f64> {
        FREQUENCIES_HZ
            .iter()
            .position(|&f| f == hz)
            .and_then(|i| self.thresholds.get(i).copied())
    }

    /// Four-frequency pure-tone average (500/1k/2k/4k Hz).
    pub fn pure_tone_average(&self) -> f64 {
        let sum: f64 = PTA_FREQUENCIES_HZ
            .iter()
            .map(|&hz| self.threshold_at(hz).unwrap_or(0.0))
            .sum();
        sum / PTA_FREQUENCIES_HZ.len() as f64
    }

    pub fn severity(&self) -> Severity {
        severity_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Mild, Severity::Moderate, Severity::Severe];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        }
    }
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// mild: PTA <= 40, moderate: 40 < PTA <= 55, severe: above.
pub fn severity_of(audiogram: &Audiogram) -> Severity {
    let pta = audiogram.pure_tone_average();
    if pta <= 40.0 {
        Severity::Mild
    } else if pta <= 55.0 {
        Severity::Moderate
    } else {
        Severity::Severe
    }
}
