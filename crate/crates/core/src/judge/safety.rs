use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, InvariantError};
use crate::json;
use crate::model::{Audiogram, Recommendation, SessionTranscript, Subproblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleSeverity {
    Minor,
    Major,
}

impl RuleSeverity {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleSeverity::Minor => "minor",
            RuleSeverity::Major => "major",
        }
    }
}

/// Declarative safety checks over a recommendation and its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafetyCheck {
    /// Every per-band delta in `payload.gain_db` must be at most `limit_db`.
    MaxGainStep { limit_db: f64 },
    AudiogramValid,
    /// Recommendations for `subproblem` must mention an inspection phrase or set `feature`.
    InspectionAdvisory { subproblem: Subproblem, phrases: Vec<String>, feature: String },
    /// The script must not contain any of `phrases` (case-insensitive).
    DenyPhrases { phrases: Vec<String> },
    /// `payload.adaptation_days` must be at least `min_days` once total |gain| exceeds the threshold.
    MinAdaptation { min_days: u32, when_total_gain_over_db: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyRule {
    pub id: String,
    pub severity: RuleSeverity,
    pub message: String,
    pub check: SafetyCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub rules: Vec<SafetyRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub severity: RuleSeverity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorVerdict {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl RegulatorVerdict {
    pub fn has_major(&self) -> bool {
        self.violations.iter().any(|v| v.severity == RuleSeverity::Major)
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{} ({}): {}", v.rule, v.severity.as_str(), v.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl SafetyConfig {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let cfg: SafetyConfig = json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FormatError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> &'static SafetyConfig {
        static CFG: OnceLock<SafetyConfig> = OnceLock::new();
        CFG.get_or_init(|| SafetyConfig::parse(include_str!("../../data/safety.json")).expect("shipped safety rules"))
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let mut seen = std::collections::HashSet::new();
        for rule in &self.rules {
            let ctx = format!("safety rule {}", rule.id);
            if !seen.insert(rule.id.as_str()) {
                return Err(InvariantError::new(ctx, "duplicate id"));
            }
            match &rule.check {
                SafetyCheck::MaxGainStep { limit_db } if !limit_db.is_finite() => {
                    return Err(InvariantError::new(ctx, "limit must be finite"))
                }
                SafetyCheck::InspectionAdvisory { phrases, feature, .. } if phrases.is_empty() && feature.is_empty() => {
                    return Err(InvariantError::new(ctx, "needs phrases or a feature"))
                }
                SafetyCheck::DenyPhrases { phrases } if phrases.iter().any(|p| p.trim().is_empty()) => {
                    return Err(InvariantError::new(ctx, "empty phrase"))
                }
                SafetyCheck::MinAdaptation { when_total_gain_over_db, .. } if !when_total_gain_over_db.is_finite() => {
                    return Err(InvariantError::new(ctx, "threshold must be finite"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn fmt_db(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:+.0}")
    } else {
        format!("{v:+}")
    }
}

fn check(rule: &SafetyRule, rec: &Recommendation, audiogram: Option<&Audiogram>) -> Option<String> {
    let script = rec.script.to_lowercase();
    match &rule.check {
        SafetyCheck::MaxGainStep { limit_db } => rec
            .payload
            .gain_db
            .iter()
            .find(|(_, &g)| g > *limit_db || !g.is_finite())
            .map(|(band, g)| format!("{} dB at {band} Hz exceeds {} dB", fmt_db(*g), fmt_db(*limit_db))),
        SafetyCheck::AudiogramValid => match audiogram {
            None => Some("audiogram absent".into()),
            Some(a) => a.validate().err().map(|e| format!("audiogram invalid: {e}")),
        },
        SafetyCheck::InspectionAdvisory { subproblem, phrases, feature } => {
            let applies = rec.subproblem == *subproblem;
            let advised = phrases.iter().any(|p| script.contains(&p.to_lowercase()))
                || (!feature.is_empty() && rec.payload.features.contains_key(feature));
            (applies && !advised).then(|| "no physical inspection advisory".to_string())
        }
        SafetyCheck::DenyPhrases { phrases } => phrases
            .iter()
            .find(|p| script.contains(&p.to_lowercase()))
            .map(|p| format!("contains \"{p}\"")),
        SafetyCheck::MinAdaptation { min_days, when_total_gain_over_db } => {
            let total = rec.payload.total_gain_change_db();
            (total > *when_total_gain_over_db && rec.payload.adaptation_days < *min_days).then(|| {
                format!("{} days for a total change of {total} dB (minimum {min_days})", rec.payload.adaptation_days)
            })
        }
    }
}

/// Evaluates every rule; passes unless a major rule is violated.
pub fn regulate(
    rec: &Recommendation,
    audiogram: Option<&Audiogram>,
    _transcript: Option<&SessionTranscript>,
    config: &SafetyConfig,
) -> RegulatorVerdict {
    let violations: Vec<Violation> = config
        .rules
        .iter()
        .filter_map(|rule| {
            check(rule, rec, audiogram).map(|detail| Violation {
                rule: rule.id.clone(),
                severity: rule.severity,
                message: format!("{}: {detail}", rule.message),
            })
        })
        .collect();
    let pass = !violations.iter().any(|v| v.severity == RuleSeverity::Major);
    RegulatorVerdict { pass, violations }
}
