use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::hearing::Audiogram;
use super::scene::SceneVector;
use super::strategy::{SlotSpec, StrategyTemplate, Subproblem};
use crate::error::{FormatError, InvariantError};
use crate::json;

/// Values collected so far for one template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAssignment {
    template: Subproblem,
    values: IndexMap<String, Option<String>>,
    #[serde(default)]
    turn_filled: IndexMap<String, u32>,
}

impl SlotAssignment {
    pub fn empty(template: &StrategyTemplate) -> Self {
        Self {
            template: template.subproblem,
            values: template.slots.iter().map(|s| (s.id.clone(), None)).collect(),
            turn_filled: IndexMap::new(),
        }
    }

    pub fn template(&self) -> Subproblem {
        self.template
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.values.get(slot).and_then(|v| v.as_deref())
    }

    pub fn values(&self) -> &IndexMap<String, Option<String>> {
        &self.values
    }

    pub fn turn_filled(&self, slot: &str) -> Option<u32> {
        self.turn_filled.get(slot).copied()
    }

    pub fn set(&mut self, slot: &str, value: &str, turn: u32) {
        self.values.insert(slot.to_string(), Some(value.to_string()));
        self.turn_filled.insert(slot.to_string(), turn);
    }

    pub fn clear(&mut self, slot: &str) {
        if let Some(v) = self.values.get_mut(slot) {
            *v = None;
        }
        self.turn_filled.shift_remove(slot);
    }

    pub fn is_assigned(&self, slot: &str) -> bool {
        self.get(slot).is_some()
    }

    pub fn all_assigned(&self, slots: &[String]) -> bool {
        slots.iter().all(|s| self.is_assigned(s))
    }

    /// S_empty: mandatory slots without a value, in template order.
    pub fn empty_mandatory<'t>(&self, template: &'t StrategyTemplate) -> Vec<&'t SlotSpec> {
        template
            .mandatory_slots()
            .filter(|s| !self.is_assigned(&s.id))
            .collect()
    }

    pub fn validate(&self, template: &StrategyTemplate) -> Result<(), InvariantError> {
        for (slot, value) in &self.values {
            let spec = template
                .slot(slot)
                .ok_or_else(|| InvariantError::new("slot assignment", format!("unknown slot `{slot}`")))?;
            if let Some(v) = value {
                if !spec.allows(v) {
                    return Err(InvariantError::new(
                        "slot assignment",
                        format!("`{v}` is not an allowed value of `{slot}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Band maps are written with string keys. Parsing goes through `String`
/// keys explicitly so the map also reads back inside tagged enums, where
/// serde buffers content and will not coerce `"250"` to an integer.
mod band_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse::<u32>().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("band `{k}` is not a frequency in Hz"))))
            .collect()
    }
}

/// Structured half of a recommendation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Payload {
    pub slots: IndexMap<String, Option<String>>,
    #[serde(default, with = "band_keys")]
    pub gain_db: BTreeMap<u32, f64>,
    #[serde(default)]
    pub features: BTreeMap<String, String>,
    pub adaptation_days: u32,
}

impl Payload {
    pub fn total_gain_change_db(&self) -> f64 {
        self.gain_db.values().map(|g| g.abs()).sum()
    }

    pub fn max_gain_increase_db(&self) -> f64 {
        self.gain_db.values().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub session_id: String,
    pub turns: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub script: String,
    pub payload: Payload,
    pub subproblem: Subproblem,
    pub provenance: Provenance,
}

impl Recommendation {
    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: u32,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    TurnLimitReached,
    Aborted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::TurnLimitReached => "turn_limit_reached",
            Outcome::Aborted => "aborted",
        }
    }
}

/// One line of a transcript JSON Lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Session {
        session_id: String,
        audiogram: Audiogram,
        parser_enabled: bool,
    },
    Scene {
        scene: SceneVector,
    },
    Subproblem {
        subproblem: Subproblem,
    },
    Turn(TurnRecord),
    Outcome {
        outcome: Outcome,
        turns: u32,
        #[serde(default)]
        recommendation: Option<Recommendation>,
    },
}

impl TranscriptEvent {
    pub fn to_line(&self) -> String {
        let mut s = json::to_string(self);
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub session_id: String,
    pub audiogram: Audiogram,
    pub parser_enabled: bool,
    pub scenes: Vec<SceneVector>,
    pub subproblem: Option<Subproblem>,
    pub turns: Vec<TurnRecord>,
    pub outcome: Option<Outcome>,
    pub recommendation: Option<Recommendation>,
}

impl SessionTranscript {
    pub fn new(session_id: impl Into<String>, audiogram: Audiogram, parser_enabled: bool) -> Self {
        Self {
            session_id: session_id.into(),
            audiogram,
            parser_enabled,
            scenes: Vec::new(),
            subproblem: None,
            turns: Vec::new(),
            outcome: None,
            recommendation: None,
        }
    }

    pub fn push_turn(&mut self, speaker: Speaker, text: impl Into<String>, slot: Option<&str>) -> &TurnRecord {
        let index = self.turns.last().map_or(0, |t| t.index + 1);
        self.turns.push(TurnRecord { index, speaker, text: text.into(), slot: slot.map(str::to_string) });
        self.turns.last().expect("just pushed")
    }

    /// Dialogue turns consumed: user replies addressed to a slot question.
    pub fn answer_turns(&self) -> u32 {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::User && t.slot.is_some())
            .count() as u32
    }

    pub fn user_free_text(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::User && t.slot.is_none())
            .map(|t| t.text.as_str())
    }

    pub fn header_event(&self) -> TranscriptEvent {
        TranscriptEvent::Session {
            session_id: self.session_id.clone(),
            audiogram: self.audiogram.clone(),
            parser_enabled: self.parser_enabled,
        }
    }

    pub fn outcome_event(&self) -> Option<TranscriptEvent> {
        self.outcome.map(|outcome| TranscriptEvent::Outcome {
            outcome,
            turns: self.answer_turns(),
            recommendation: self.recommendation.clone(),
        })
    }

    pub fn events(&self) -> Vec<TranscriptEvent> {
        let mut events = vec![self.header_event()];
        events.extend(self.scenes.iter().cloned().map(|scene| TranscriptEvent::Scene { scene }));
        if let Some(subproblem) = self.subproblem {
            events.push(TranscriptEvent::Subproblem { subproblem });
        }
        events.extend(self.turns.iter().cloned().map(TranscriptEvent::Turn));
        events.extend(self.outcome_event());
        events
    }

    pub fn to_jsonl(&self) -> String {
        self.events().iter().map(TranscriptEvent::to_line).collect()
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        self.audiogram.validate()?;
        for scene in &self.scenes {
            scene.validate()?;
        }
        for pair in self.turns.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(InvariantError::new(
                    "transcript",
                    format!("turn index {} follows {}", pair[1].index, pair[0].index),
                ));
            }
        }
        if self.outcome == Some(Outcome::Completed) && self.recommendation.is_none() {
            return Err(InvariantError::new("transcript", "completed session without a recommendation"));
        }
        if self.outcome.is_none() && self.recommendation.is_some() {
            return Err(InvariantError::new("transcript", "recommendation without an outcome"));
        }
        Ok(())
    }

    /// Parses a complete transcript; the last line must be the outcome record.
    pub fn from_jsonl(input: &str) -> Result<Self, FormatError> {
        let mut lines = json::jsonl_lines(input).peekable();
        let (offset, first) = lines
            .next()
            .ok_or_else(|| InvariantError::new("transcript", "empty transcript"))?;
        let mut transcript = match json::from_str_at::<TranscriptEvent>(first, offset)? {
            TranscriptEvent::Session { session_id, audiogram, parser_enabled } => {
                SessionTranscript::new(session_id, audiogram, parser_enabled)
            }
            _ => return Err(InvariantError::new("transcript", "first line must be the session record").into()),
        };
        let mut closing_turns = None;
        while let Some((offset, line)) = lines.next() {
            let event: TranscriptEvent = json::from_str_at(line, offset)?;
            if closing_turns.is_some() {
                return Err(InvariantError::new("transcript", "events after the outcome record").into());
            }
            match event {
                TranscriptEvent::Session { .. } => {
                    return Err(InvariantError::new("transcript", "repeated session record").into())
                }
                TranscriptEvent::Scene { scene } => transcript.scenes.push(scene),
                TranscriptEvent::Subproblem { subproblem } => transcript.subproblem = Some(subproblem),
                TranscriptEvent::Turn(turn) => transcript.turns.push(turn),
                TranscriptEvent::Outcome { outcome, turns, recommendation } => {
                    transcript.outcome = Some(outcome);
                    transcript.recommendation = recommendation;
                    closing_turns = Some(turns);
                }
            }
        }
        let turns = closing_turns.ok_or_else(|| InvariantError::new("transcript", "missing outcome record"))?;
        transcript.validate()?;
        if turns != transcript.answer_turns() {
            return Err(InvariantError::new(
                "transcript",
                format!("outcome reports {turns} turns but {} answers were recorded", transcript.answer_turns()),
            )
            .into());
        }
        Ok(transcript)
    }
}
