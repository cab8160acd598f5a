use std::collections::BTreeMap;

use crate::error::InvariantError;
use crate::model::{
    Audiogram, Payload, Provenance, Recommendation, SceneClass, SlotAssignment, StrategyTemplate, FREQUENCIES_HZ,
};
use crate::prompts::fill_strict;

pub const DEFAULT_ADAPTATION_DAYS: u32 = 14;

/// What the recommendation may say about the user beyond the slot values.
#[derive(Debug, Clone, Default)]
pub struct RenderContext<'a> {
    pub session_id: &'a str,
    pub turns: u32,
    pub complaint: Option<&'a str>,
    pub audiogram: Option<&'a Audiogram>,
    /// Dominant scene, only when the parser ran.
    pub scene: Option<SceneClass>,
}

/// Merges every action row whose `when` pairs all match; later rows override earlier ones per key.
pub fn derive_actions(template: &StrategyTemplate, assignment: &SlotAssignment) -> (BTreeMap<u32, f64>, BTreeMap<String, String>, u32) {
    let mut gain = BTreeMap::new();
    let mut features = BTreeMap::new();
    let mut days = None;
    for row in &template.actions {
        if row.when.iter().all(|(slot, value)| assignment.get(slot) == Some(value.as_str())) {
            gain.extend(row.gain_db.iter().map(|(b, g)| (*b, *g)));
            features.extend(row.features.iter().map(|(k, v)| (k.clone(), v.clone())));
            if row.adaptation_days.is_some() {
                days = row.adaptation_days;
            }
        }
    }
    (gain, features, days.unwrap_or(DEFAULT_ADAPTATION_DAYS))
}

fn fmt_gain(g: f64) -> String {
    if g.fract() == 0.0 {
        format!("{g:+.0}")
    } else {
        format!("{g:+}")
    }
}

fn audiogram_line(a: &Audiogram) -> String {
    let worst = a
        .thresholds()
        .iter()
        .zip(FREQUENCIES_HZ)
        .fold((f64::MIN, 0u32), |acc, (&db, hz)| if db > acc.0 { (db, hz) } else { acc });
    format!(
        "Your audiogram shows a {} loss, with an average threshold of {:.0} dB HL and the weakest hearing at {} Hz.",
        a.severity(),
        a.pure_tone_average(),
        worst.1
    )
}

fn scene_line(scene: SceneClass) -> &'static str {
    match scene {
        SceneClass::Conversation => "Right now your surroundings sound like people talking.",
        SceneClass::Noise => "Right now your surroundings sound like a noisy place.",
        SceneClass::Quiet => "Right now your surroundings sound quiet.",
    }
}

/// Fills the skeleton and, for templates with an action table, wraps it with
/// the personal context and a numbered fitting plan.
pub fn render_recommendation(
    template: &StrategyTemplate,
    assignment: &SlotAssignment,
    ctx: &RenderContext<'_>,
) -> Result<Recommendation, InvariantError> {
    let body = fill_strict(&template.script_skeleton, |slot| assignment.get(slot).map(str::to_string))?;
    let (gain_db, features, adaptation_days) = derive_actions(template, assignment);

    let script = if template.actions.is_empty() {
        body
    } else {
        let mut parts = Vec::new();
        if let Some(c) = ctx.complaint.map(str::trim).filter(|c| !c.is_empty()) {
            parts.push(format!("You mentioned: \"{}\".", c.trim_end_matches(['.', '!', '?'])));
        }
        if let Some(a) = ctx.audiogram {
            parts.push(audiogram_line(a));
        }
        if let Some(s) = ctx.scene {
            parts.push(scene_line(s).to_string());
        }
        parts.push(body);
        let mut plan = Vec::new();
        for (band, g) in &gain_db {
            plan.push(format!("Change gain by {} dB at {band} Hz.", fmt_gain(*g)));
        }
        for (feature, value) in &features {
            plan.push(format!("Set {} to {}.", feature.replace('_', " "), value.replace('_', " ")));
        }
        plan.push(format!("Give yourself {adaptation_days} days to get used to the change."));
        let numbered: Vec<String> = plan.iter().enumerate().map(|(i, p)| format!("{}. {p}", i + 1)).collect();
        parts.push(format!("Your plan:\n{}", numbered.join("\n")));
        parts.join("\n")
    };

    Ok(Recommendation {
        script,
        payload: Payload { slots: assignment.values().clone(), gain_db, features, adaptation_days },
        subproblem: template.subproblem,
        provenance: Provenance { session_id: ctx.session_id.to_string(), turns: ctx.turns },
    })
}
