//! The strategy book: one questionnaire template per subproblem.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::hearing::FREQUENCIES_HZ;
use crate::error::{FormatError, InvariantError};
use crate::json;

pub const SLOTS_PER_TEMPLATE: usize = 8;
const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

/// Slot ids appended to every template when the scene parser is switched off.
pub const CONTEXT_SLOT_TYPE: &str = "environment_type";
pub const CONTEXT_SLOT_LOUDNESS: &str = "environment_loudness";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subproblem {
    Noise,
    Distortion,
    Clarity,
    Loudness,
    BlockedEars,
    Howl,
}

impl Subproblem {
    pub const ALL: [Subproblem; 6] = [
        Subproblem::Noise,
        Subproblem::Distortion,
        Subproblem::Clarity,
        Subproblem::Loudness,
        Subproblem::BlockedEars,
        Subproblem::Howl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subproblem::Noise => "noise",
            Subproblem::Distortion => "distortion",
            Subproblem::Clarity => "clarity",
            Subproblem::Loudness => "loudness",
            Subproblem::BlockedEars => "blocked_ears",
            Subproblem::Howl => "howl",
        }
    }

    /// Accepts the canonical label, case-insensitively, with spaces or dashes for underscores.
    pub fn parse(label: &str) -> Option<Self> {
        let norm = label.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL.into_iter().find(|s| s.as_str() == norm)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap_or(0)
    }
}

impl std::fmt::Display for Subproblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub id: String,
    pub question: String,
    pub allowed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    pub mandatory: bool,
}

impl SlotSpec {
    pub fn new(id: &str, question: &str, allowed: &[&str]) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            allowed: allowed.iter().map(|s| s.to_string()).collect(),
            prior: None,
            mandatory: true,
        }
    }

    /// Shannon entropy in bits of the slot's prior over its allowed values.
    pub fn entropy_bits(&self) -> f64 {
        match &self.prior {
            None => (self.allowed.len() as f64).log2(),
            Some(p) => -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>(),
        }
    }

    pub fn allows(&self, value: &str) -> bool {
        self.allowed.iter().any(|a| a == value)
    }

    fn validate(&self, ctx: &str) -> Result<(), InvariantError> {
        if self.id.trim().is_empty() {
            return Err(InvariantError::new(ctx, "slot with empty id"));
        }
        if self.allowed.is_empty() {
            return Err(InvariantError::new(ctx, format!("slot `{}` has no allowed values", self.id)));
        }
        let distinct: HashSet<_> = self.allowed.iter().collect();
        if distinct.len() != self.allowed.len() {
            return Err(InvariantError::new(ctx, format!("slot `{}` repeats an allowed value", self.id)));
        }
        if let Some(prior) = &self.prior {
            if prior.len() != self.allowed.len() {
                return Err(InvariantError::new(
                    ctx,
                    format!("slot `{}` prior has {} entries for {} values", self.id, prior.len(), self.allowed.len()),
                ));
            }
            if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(InvariantError::new(ctx, format!("slot `{}` prior has a negative entry", self.id)));
            }
            let sum: f64 = prior.iter().sum();
            if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
                return Err(InvariantError::new(ctx, format!("slot `{}` prior sums to {sum}", self.id)));
            }
        }
        Ok(())
    }
}

/// Declarative constraint over slot values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Eq { slot: String, value: String },
    Ne { slot: String, value: String },
    In { slot: String, values: Vec<String> },
    NotIn { slot: String, values: Vec<String> },
    Implies {
        #[serde(rename = "if")]
        when: Box<Predicate>,
        then: Box<Predicate>,
    },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

impl Predicate {
    pub fn eq(slot: &str, value: &str) -> Self {
        Predicate::Eq { slot: slot.into(), value: value.into() }
    }

    pub fn ne(slot: &str, value: &str) -> Self {
        Predicate::Ne { slot: slot.into(), value: value.into() }
    }

    pub fn implies(when: Predicate, then: Predicate) -> Self {
        Predicate::Implies { when: Box::new(when), then: Box::new(then) }
    }

    /// Evaluates against a lookup; an unassigned slot satisfies no equality or membership test.
    pub fn eval<'a, F>(&self, lookup: &F) -> bool
    where
        F: Fn(&str) -> Option<&'a str>,
    {
        match self {
            Predicate::Eq { slot, value } => lookup(slot) == Some(value.as_str()),
            Predicate::Ne { slot, value } => lookup(slot).is_some_and(|v| v != value),
            Predicate::In { slot, values } => lookup(slot).is_some_and(|v| values.iter().any(|x| x == v)),
            Predicate::NotIn { slot, values } => lookup(slot).is_some_and(|v| values.iter().all(|x| x != v)),
            Predicate::Implies { when, then } => !when.eval(lookup) || then.eval(lookup),
            Predicate::All { of } => of.iter().all(|p| p.eval(lookup)),
            Predicate::Any { of } => of.iter().any(|p| p.eval(lookup)),
            Predicate::Not { of } => !of.eval(lookup),
        }
    }

    /// `(slot, value)` pairs the predicate compares against.
    pub fn literals(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_literals(&mut out);
        out
    }

    fn collect_literals<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        match self {
            Predicate::Eq { slot, value } | Predicate::Ne { slot, value } => out.push((slot, value)),
            Predicate::In { slot, values } | Predicate::NotIn { slot, values } => {
                out.extend(values.iter().map(|v| (slot.as_str(), v.as_str())))
            }
            Predicate::Implies { when, then } => {
                when.collect_literals(out);
                then.collect_literals(out);
            }
            Predicate::All { of } | Predicate::Any { of } => of.iter().for_each(|p| p.collect_literals(out)),
            Predicate::Not { of } => of.collect_literals(out),
        }
    }

    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (slot, _) in self.literals() {
            if !out.contains(&slot) {
                out.push(slot);
            }
        }
        // In/NotIn with an empty value list still reference their slot.
        self.collect_bare_slots(&mut out);
        out
    }

    fn collect_bare_slots<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::In { slot, values } | Predicate::NotIn { slot, values } if values.is_empty() => {
                if !out.contains(&slot.as_str()) {
                    out.push(slot);
                }
            }
            Predicate::Implies { when, then } => {
                when.collect_bare_slots(out);
                then.collect_bare_slots(out);
            }
            Predicate::All { of } | Predicate::Any { of } => of.iter().for_each(|p| p.collect_bare_slots(out)),
            Predicate::Not { of } => of.collect_bare_slots(out),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRule {
    pub id: String,
    pub scope: Vec<String>,
    pub predicate: Predicate,
    pub violation_message: String,
    pub repair_slot: String,
}

/// Parameter changes applied when every `when` pair matches the final assignment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionRow {
    #[serde(default)]
    pub when: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gain_db: BTreeMap<u32, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTemplate {
    pub subproblem: Subproblem,
    pub slots: Vec<SlotSpec>,
    #[serde(default)]
    pub rules: Vec<DomainRule>,
    pub script_skeleton: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<ActionRow>,
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Za-z0-9_]+)\}").unwrap());

impl StrategyTemplate {
    pub fn id(&self) -> Subproblem {
        self.subproblem
    }

    pub fn slot(&self, id: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.id == id)
    }

    pub fn mandatory_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.mandatory)
    }

    /// Slot ids named by `{slot_id}` placeholders, in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        PLACEHOLDER
            .captures_iter(&self.script_skeleton)
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Full check, including the fixed slot count of book templates.
    pub fn validate(&self) -> Result<(), InvariantError> {
        let ctx = format!("template `{}`", self.subproblem);
        if self.slots.len() != SLOTS_PER_TEMPLATE {
            return Err(InvariantError::new(
                &ctx,
                format!("expected {SLOTS_PER_TEMPLATE} slots, found {}", self.slots.len()),
            ));
        }
        self.validate_structure()
    }

    /// Checks everything except the slot count (augmented templates carry extra context slots).
    pub fn validate_structure(&self) -> Result<(), InvariantError> {
        let ctx = format!("template `{}`", self.subproblem);
        let mut ids = HashSet::new();
        for slot in &self.slots {
            slot.validate(&ctx)?;
            if !ids.insert(slot.id.as_str()) {
                return Err(InvariantError::new(&ctx, format!("duplicate slot id `{}`", slot.id)));
            }
        }
        for name in self.placeholders() {
            if !ids.contains(name.as_str()) {
                return Err(InvariantError::new(&ctx, format!("placeholder `{{{name}}}` names no slot")));
            }
        }
        let mut rule_ids = HashSet::new();
        for rule in &self.rules {
            if !rule_ids.insert(rule.id.as_str()) {
                return Err(InvariantError::new(&ctx, format!("duplicate rule id `{}`", rule.id)));
            }
            if rule.scope.is_empty() {
                return Err(InvariantError::new(&ctx, format!("rule `{}` has empty scope", rule.id)));
            }
            if let Some(bad) = rule.scope.iter().find(|s| !ids.contains(s.as_str())) {
                return Err(InvariantError::new(&ctx, format!("rule `{}` scope names unknown slot `{bad}`", rule.id)));
            }
            if !rule.scope.contains(&rule.repair_slot) {
                return Err(InvariantError::new(
                    &ctx,
                    format!("rule `{}` repair slot `{}` is outside its scope", rule.id, rule.repair_slot),
                ));
            }
            if let Some(bad) = rule.predicate.slots().into_iter().find(|s| !rule.scope.iter().any(|x| x == s)) {
                return Err(InvariantError::new(
                    &ctx,
                    format!("rule `{}` predicate references `{bad}` outside its scope", rule.id),
                ));
            }
            for (slot, value) in rule.predicate.literals() {
                let spec = self.slot(slot).expect("scope checked above");
                if !spec.allows(value) {
                    return Err(InvariantError::new(
                        &ctx,
                        format!("rule `{}` compares `{slot}` with disallowed value `{value}`", rule.id),
                    ));
                }
            }
        }
        for (i, row) in self.actions.iter().enumerate() {
            for (slot, value) in &row.when {
                match self.slot(slot) {
                    Some(spec) if spec.allows(value) => {}
                    _ => {
                        return Err(InvariantError::new(
                            &ctx,
                            format!("action row {i} matches on invalid `{slot}={value}`"),
                        ))
                    }
                }
            }
            if let Some(band) = row.gain_db.keys().find(|b| !FREQUENCIES_HZ.contains(b)) {
                return Err(InvariantError::new(&ctx, format!("action row {i} targets unknown band {band} Hz")));
            }
            if row.gain_db.values().any(|g| !g.is_finite()) {
                return Err(InvariantError::new(&ctx, format!("action row {i} has a non-finite gain")));
            }
        }
        Ok(())
    }

    /// Copy with the two scene-context questions appended, used when no scene parser runs.
    pub fn with_context_slots(&self) -> StrategyTemplate {
        let mut t = self.clone();
        if t.slot(CONTEXT_SLOT_TYPE).is_none() {
            t.slots.push(SlotSpec::new(
                CONTEXT_SLOT_TYPE,
                "What kind of place are you in right now: mostly people talking, a noisy place, or somewhere quiet?",
                &["conversation", "noise", "quiet"],
            ));
        }
        if t.slot(CONTEXT_SLOT_LOUDNESS).is_none() {
            t.slots.push(SlotSpec::new(
                CONTEXT_SLOT_LOUDNESS,
                "How loud are your surroundings at the moment: soft, moderate, or loud?",
                &["soft", "moderate", "loud"],
            ));
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyBook {
    templates: Vec<StrategyTemplate>,
}

const DEFAULT_BOOK: &str = include_str!("../../data/strategy_book.json");

impl StrategyBook {
    pub fn new(templates: Vec<StrategyTemplate>) -> Result<Self, InvariantError> {
        let book = Self { templates };
        book.validate()?;
        Ok(book)
    }

    /// The shipped book with one template per subproblem.
    pub fn default_book() -> Self {
        Self::parse(DEFAULT_BOOK).expect("shipped strategy book is valid")
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let book: StrategyBook = json::from_str(text)?;
        book.validate()?;
        Ok(book)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FormatError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let mut seen = HashSet::new();
        for t in &self.templates {
            t.validate()?;
            if !seen.insert(t.subproblem) {
                return Err(InvariantError::new(
                    format!("template `{}`", t.subproblem),
                    "more than one template for this subproblem",
                ));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> &[StrategyTemplate] {
        &self.templates
    }

    pub fn get(&self, subproblem: Subproblem) -> Option<&StrategyTemplate> {
        self.templates.iter().find(|t| t.subproblem == subproblem)
    }
}
