//! Ethical regulator and the five-metric session judge.

mod safety;
mod score;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

pub use safety::{regulate, RegulatorVerdict, RuleSeverity, SafetyCheck, SafetyConfig, SafetyRule, Violation};
pub use score::{
    count_syllables, empathy_component, flesch_reading_ease, ic_mentions, pa_categories, readability_component,
    score_cs, score_ic, score_pa, score_re, score_tc, text_stats, JudgeLexicon, Mention, PaCategory, TextStats,
};

use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{Audiogram, JudgeReport, Recommendation, SessionTranscript, Speaker, StrategyTemplate};
use crate::prompts::{fill, Prompts};

pub const TAG_JUDGE_PREFIX: &str = "judge:";

#[derive(Clone, Copy)]
pub enum JudgeMode<'a> {
    Deterministic,
    Llm(&'a dyn ChatBackend),
}

impl std::fmt::Debug for JudgeMode<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JudgeMode::Deterministic => f.write_str("Deterministic"),
            JudgeMode::Llm(b) => write!(f, "Llm({})", b.id()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Tc,
    Cs,
    Pa,
    Re,
    Ic,
}

impl Metric {
    const ALL: [Metric; 5] = [Metric::Tc, Metric::Cs, Metric::Pa, Metric::Re, Metric::Ic];

    fn key(self) -> &'static str {
        match self {
            Metric::Tc => "s_tc",
            Metric::Cs => "s_cs",
            Metric::Pa => "s_pa",
            Metric::Re => "s_re",
            Metric::Ic => "s_ic",
        }
    }

    fn max(self) -> f64 {
        match self {
            Metric::Tc | Metric::Ic => 1.0,
            _ => 5.0,
        }
    }

    fn definition(self) -> &'static str {
        match self {
            Metric::Tc => "fraction of the template's mandatory slots that are filled with an allowed value and satisfy the template's rules",
            Metric::Cs => "clinical safety of the advice: 5 = no safety issues, 3 = minor risk, 1 = major risk",
            Metric::Pa => "number of distinct user-specific elements used: audiogram, personal details, earlier feedback, the listening scene, the user's own answers",
            Metric::Re => "average of plain-language readability and empathy of the script",
            Metric::Ic => "1 minus the fraction of statements in the script that contradict the structured settings",
        }
    }

    fn scale(self) -> &'static str {
        match self {
            Metric::Tc | Metric::Ic => "a real number from 0 to 1",
            _ => "a number from 0 to 5",
        }
    }
}

fn first_number(text: &str) -> Option<f64> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    NUM.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("static regex"))
        .find(text)
        .and_then(|m| m.as_str().parse().ok())
}

fn render_transcript(t: &SessionTranscript) -> String {
    t.turns
        .iter()
        .map(|turn| {
            let who = match turn.speaker {
                Speaker::User => "user",
                Speaker::Agent => "assistant",
            };
            format!("{who}: {}", turn.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Context shared by every judge call.
pub struct JudgeInputs<'a> {
    pub transcript: &'a SessionTranscript,
    pub recommendation: &'a Recommendation,
    pub template: &'a StrategyTemplate,
    pub audiogram: Option<&'a Audiogram>,
}

/// Scores a completed session. Without the scene parser the context questions
/// count as mandatory slots of the template.
pub fn judge(inputs: &JudgeInputs<'_>, mode: JudgeMode<'_>, safety: &SafetyConfig, prompts: &Prompts) -> JudgeReport {
    let JudgeInputs { transcript, recommendation: rec, audiogram, .. } = *inputs;
    let augmented;
    let template = if transcript.parser_enabled {
        inputs.template
    } else {
        augmented = inputs.template.with_context_slots();
        &augmented
    };
    let mut findings = Vec::new();

    let verdict = regulate(rec, audiogram, Some(transcript), safety);
    for v in &verdict.violations {
        findings.push(format!("regulator {} ({}): {}", v.rule, v.severity.as_str(), v.message));
    }
    for m in ic_mentions(&rec.script, &rec.payload, Some(template)) {
        if !m.consistent {
            findings.push(format!("contradiction in {}: script says \"{}\"", m.what, m.said));
        }
    }

    let readability_applies = prompts.language == "en";
    let s_re = if readability_applies {
        score_re(&rec.script)
    } else {
        findings.push(format!("readability not applicable to language `{}`; S_RE is the empathy component", prompts.language));
        empathy_component(&rec.script)
    };
    let mut scores = BTreeMap::from([
        ("s_tc", score_tc(rec, template)),
        ("s_cs", score_cs(&verdict)),
        ("s_pa", score_pa(&rec.script, audiogram, transcript)),
        ("s_re", s_re),
        ("s_ic", score_ic(&rec.script, &rec.payload, Some(template))),
    ]);

    if let JudgeMode::Llm(backend) = mode {
        let mut vars = BTreeMap::from([
            ("transcript", render_transcript(transcript)),
            ("script", rec.script.clone()),
            ("payload", crate::json::to_string(&rec.payload)),
        ]);
        let user = fill(&prompts.judge_user, &vars);
        for metric in Metric::ALL {
            vars.insert("metric", metric.key().to_string());
            vars.insert("definition", metric.definition().to_string());
            vars.insert("scale", metric.scale().to_string());
            let system = fill(&prompts.judge_system, &vars);
            let request = ChatRequest::new(format!("{TAG_JUDGE_PREFIX}{}", metric.key()), system, user.clone());
            let parsed = match backend.complete(&request) {
                Ok(resp) => match first_number(&resp.text) {
                    Some(v) if (0.0..=metric.max()).contains(&v) => Ok(v),
                    _ => Err(format!("unparseable reply {:?}", resp.text)),
                },
                Err(e) => Err(e.to_string()),
            };
            match parsed {
                Ok(v) => {
                    scores.insert(metric.key(), v);
                }
                Err(why) => findings.push(format!("{}: llm judge fell back to deterministic ({why})", metric.key())),
            }
        }
    }

    let report = JudgeReport {
        s_tc: scores["s_tc"],
        s_cs: scores["s_cs"],
        s_pa: scores["s_pa"],
        s_re: scores["s_re"],
        s_ic: scores["s_ic"],
        findings,
    };
    debug_assert!(report.validate().is_ok(), "deterministic scorers stay on scale");
    report
}
