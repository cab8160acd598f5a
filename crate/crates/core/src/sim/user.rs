use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scenario;
use crate::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, TAG_ASK_REPAIR, TAG_ASK_SLOT, TAG_COMPLAINT};
use crate::model::StrategyTemplate;
use crate::prompts::{fill, Prompts};

/// Scripted persona answering from a scenario's hidden answers.
///
/// With probability `inconsistency_rate` an `ask_slot` answer is replaced by a
/// value that breaks a rule repairable through that same slot; repair
/// questions always get the true value.
pub struct VirtualUser {
    complaint: String,
    answers: BTreeMap<String, String>,
    lies: BTreeMap<String, Vec<String>>,
    rate: f64,
    rng: Mutex<ChaCha8Rng>,
    persona: String,
}

/// Values for `slot` whose every resulting violation names `slot` as its repair slot.
pub fn repairable_lies(template: &StrategyTemplate, answers: &BTreeMap<String, String>, slot: &str) -> Vec<String> {
    let Some(spec) = template.slot(slot) else { return Vec::new() };
    let truth = answers.get(slot).map(String::as_str);
    spec.allowed
        .iter()
        .filter(|v| Some(v.as_str()) != truth)
        .filter(|v| {
            let lookup = |s: &str| if s == slot { Some(v.as_str()) } else { answers.get(s).map(String::as_str) };
            let violated: Vec<_> = template.rules.iter().filter(|r| !r.predicate.eval(&lookup)).collect();
            !violated.is_empty() && violated.iter().all(|r| r.repair_slot == slot)
        })
        .cloned()
        .collect()
}

impl VirtualUser {
    pub fn new(scenario: &Scenario, template: Option<&StrategyTemplate>) -> Self {
        Self::with_prompts(scenario, template, &Prompts::default())
    }

    pub fn with_prompts(scenario: &Scenario, template: Option<&StrategyTemplate>, prompts: &Prompts) -> Self {
        let lies = match template {
            Some(t) => t
                .slots
                .iter()
                .map(|s| (s.id.clone(), repairable_lies(t, &scenario.hidden_answers, &s.id)))
                .filter(|(_, l)| !l.is_empty())
                .collect(),
            None => BTreeMap::new(),
        };
        let answers_text = scenario.hidden_answers.iter().map(|(k, v)| format!("- {k}: {v}")).collect::<Vec<_>>().join("\n");
        let audiogram_text = scenario
            .audiogram
            .thresholds()
            .iter()
            .zip(crate::model::FREQUENCIES_HZ)
            .map(|(db, hz)| format!("{hz} Hz {db:.0} dB HL"))
            .collect::<Vec<_>>()
            .join(", ");
        let persona = fill(
            &prompts.user_persona,
            &BTreeMap::from([
                ("audiogram", audiogram_text),
                ("complaint", scenario.complaint.clone()),
                ("answers", answers_text),
            ]),
        );
        Self {
            complaint: scenario.complaint.clone(),
            answers: scenario.hidden_answers.clone(),
            lies,
            rate: scenario.inconsistency_rate,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5EED_0F_u64)),
            persona,
        }
    }

    /// System prompt describing the persona, sent with every request.
    pub fn persona(&self) -> &str {
        &self.persona
    }

    fn unknown(&self, tag: &str) -> LlmError {
        LlmError::UnknownTag { backend: self.id().to_string(), tag: tag.to_string() }
    }
}

impl ChatBackend for VirtualUser {
    fn id(&self) -> &str {
        "virtual_user"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let tag = request.tag.as_str();
        let text = if tag == TAG_COMPLAINT {
            self.complaint.clone()
        } else if let Some(slot) = tag.strip_prefix(TAG_ASK_REPAIR) {
            self.answers.get(slot).cloned().ok_or_else(|| self.unknown(tag))?
        } else if let Some(slot) = tag.strip_prefix(TAG_ASK_SLOT) {
            let truth = self.answers.get(slot).cloned().ok_or_else(|| self.unknown(tag))?;
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            let roll: f64 = rng.gen();
            match self.lies.get(slot) {
                Some(lies) if roll < self.rate => lies[rng.gen_range(0..lies.len())].clone(),
                _ => truth,
            }
        } else {
            return Err(self.unknown(tag));
        };
        Ok(ChatResponse::stop(text, self.id()))
    }
}
