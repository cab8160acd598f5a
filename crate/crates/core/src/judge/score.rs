use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::safety::{RegulatorVerdict, RuleSeverity};
use crate::llm::Lexicon;
use crate::model::{Audiogram, Payload, Recommendation, SessionTranscript, StrategyTemplate};

#[derive(Debug, Clone, Deserialize)]
pub struct JudgeLexicon {
    pub care_checklist: Vec<Vec<String>>,
    pub feedback_phrases: Vec<String>,
    pub scene_phrases: Vec<String>,
    pub stopwords: HashSet<String>,
    pub ignored_slot_values: HashSet<String>,
}

impl JudgeLexicon {
    pub fn shipped() -> &'static JudgeLexicon {
        static LEX: OnceLock<JudgeLexicon> = OnceLock::new();
        LEX.get_or_init(|| {
            let lex: JudgeLexicon =
                crate::json::from_str(include_str!("../../data/judge_lexicon.json")).expect("shipped judge lexicon");
            assert_eq!(lex.care_checklist.len(), 10, "CARE checklist has 10 items");
            lex
        })
    }
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    let needle = needle.to_lowercase();
    haystack.match_indices(&needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Slots whose rule constraints fail: members of the scope of any violated,
/// fully assigned rule.
fn rule_failures<'t>(template: &'t StrategyTemplate, payload: &Payload) -> HashSet<&'t str> {
    let lookup = |slot: &str| payload.slots.get(slot).and_then(|v| v.as_deref());
    let mut bad = HashSet::new();
    for rule in &template.rules {
        let complete = rule.scope.iter().all(|s| lookup(s).is_some());
        if complete && !rule.predicate.eval(&lookup) {
            bad.extend(rule.scope.iter().map(String::as_str));
        }
    }
    bad
}

/// S_TC: fraction of mandatory slots that are set, allowed, and not part of a violated rule.
pub fn score_tc(rec: &Recommendation, template: &StrategyTemplate) -> f64 {
    let failed = rule_failures(template, &rec.payload);
    let mandatory: Vec<_> = template.mandatory_slots().collect();
    if mandatory.is_empty() {
        return 1.0;
    }
    let valid = mandatory
        .iter()
        .filter(|spec| {
            let value = rec.payload.slots.get(&spec.id).and_then(|v| v.as_deref());
            value.is_some_and(|v| spec.allows(v)) && !failed.contains(spec.id.as_str())
        })
        .count();
    valid as f64 / mandatory.len() as f64
}

/// S_CS on the rubric anchors: 5 clean, 3 minor only, 1 any major.
pub fn score_cs(verdict: &RegulatorVerdict) -> f64 {
    if verdict.violations.iter().any(|v| v.severity == RuleSeverity::Major) {
        1.0
    } else if verdict.violations.is_empty() {
        5.0
    } else {
        3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaCategory {
    Audiogram,
    PersonalInfo,
    PriorFeedback,
    Scene,
    SlotValue,
}

pub fn pa_categories(script: &str, _audiogram: Option<&Audiogram>, transcript: &SessionTranscript) -> Vec<PaCategory> {
    static AUDIO: OnceLock<Regex> = OnceLock::new();
    let lex = JudgeLexicon::shipped();
    let text = script.to_lowercase();
    let mut hits = Vec::new();

    let audio = regex(&AUDIO, r"(?i)\b\d+(?:\.\d+)?\s?k?hz\b|\bdb hl\b|\baudiogram\b");
    if audio.is_match(script) {
        hits.push(PaCategory::Audiogram);
    }

    let keywords: Vec<&str> = Lexicon::shipped().keywords().collect();
    let personal = transcript.user_free_text().any(|said| {
        said.to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|w| w.chars().filter(|c| c.is_alphabetic()).count() >= 4)
            .filter(|w| !lex.stopwords.contains(*w) && !keywords.iter().any(|k| w.contains(k)))
            .any(|w| contains_word(&text, w))
    });
    if personal {
        hits.push(PaCategory::PersonalInfo);
    }

    if lex.feedback_phrases.iter().any(|p| text.contains(p.as_str())) {
        hits.push(PaCategory::PriorFeedback);
    }
    if lex.scene_phrases.iter().any(|p| contains_word(&text, p)) {
        hits.push(PaCategory::Scene);
    }

    let slot_values: Vec<&str> = match &transcript.recommendation {
        Some(rec) => rec.payload.slots.values().filter_map(|v| v.as_deref()).collect(),
        None => Vec::new(),
    };
    if slot_values
        .iter()
        .filter(|v| !lex.ignored_slot_values.contains(&v.to_lowercase()))
        .any(|v| contains_word(&text, v))
    {
        hits.push(PaCategory::SlotValue);
    }
    hits
}

/// S_PA: distinct personalisation categories referenced, capped at 5.
pub fn score_pa(script: &str, audiogram: Option<&Audiogram>, transcript: &SessionTranscript) -> f64 {
    pa_categories(script, audiogram, transcript).len().min(5) as f64
}

/// Vowel groups, minus a silent trailing `e`, at least one.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_ascii_alphabetic()).collect();
    if w.is_empty() {
        return 0;
    }
    let vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev = false;
    for &c in &w {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    let silent_e = n > 2 && w[n - 1] == 'e' && !vowel(w[n - 2]) && !(w[n - 2] == 'l' && !vowel(w[n - 3]));
    if silent_e && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
}

pub fn text_stats(text: &str) -> TextStats {
    static WORD: OnceLock<Regex> = OnceLock::new();
    let word = regex(&WORD, r"[A-Za-z]+(?:'[A-Za-z]+)*");
    let mut stats = TextStats { words: 0, sentences: 0, syllables: 0 };
    for sentence in text.split(['.', '!', '?', '\n']) {
        let mut any = false;
        for m in word.find_iter(sentence) {
            any = true;
            stats.words += 1;
            stats.syllables += count_syllables(m.as_str());
        }
        if any {
            stats.sentences += 1;
        }
    }
    stats
}

pub fn flesch_reading_ease(text: &str) -> f64 {
    let s = text_stats(text);
    if s.words == 0 {
        return 0.0;
    }
    206.835 - 1.015 * (s.words as f64 / s.sentences as f64) - 84.6 * (s.syllables as f64 / s.words as f64)
}

pub fn readability_component(script: &str) -> f64 {
    flesch_reading_ease(script).clamp(0.0, 100.0) / 20.0
}

/// Fraction of the 10 CARE items with at least one phrase present, times 5.
pub fn empathy_component(script: &str) -> f64 {
    let text = script.to_lowercase();
    let items = &JudgeLexicon::shipped().care_checklist;
    let hits = items.iter().filter(|variants| variants.iter().any(|p| text.contains(p.as_str()))).count();
    hits as f64 / items.len() as f64 * 5.0
}

/// S_RE: mean of the readability and empathy components.
pub fn score_re(script: &str) -> f64 {
    (readability_component(script) + empathy_component(script)) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub what: String,
    pub said: String,
    pub consistent: bool,
}

fn skeleton_pattern(skeleton: &str) -> Option<(Regex, Vec<String>)> {
    let re = crate::prompts::placeholder_regex();
    let mut pattern = String::new();
    let mut names = Vec::new();
    let mut last = 0;
    for caps in re.captures_iter(skeleton) {
        let m = caps.get(0)?;
        pattern.push_str(&regex::escape(&skeleton[last..m.start()]));
        pattern.push_str("(.+?)");
        names.push(caps[1].to_string());
        last = m.end();
    }
    if names.is_empty() {
        return None;
    }
    pattern.push_str(&regex::escape(&skeleton[last..]));
    Regex::new(&pattern).ok().map(|r| (r, names))
}

fn numbers_equal(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Checkable statements in the script: placeholder values recovered through the
/// template skeleton, signed gain changes, and the adaptation period.
pub fn ic_mentions(script: &str, payload: &Payload, template: Option<&StrategyTemplate>) -> Vec<Mention> {
    static GAIN: OnceLock<Regex> = OnceLock::new();
    static DAYS: OnceLock<Regex> = OnceLock::new();
    let mut out = Vec::new();

    if let Some((re, names)) = template.and_then(|t| skeleton_pattern(&t.script_skeleton)) {
        if let Some(caps) = re.captures(script) {
            for (i, name) in names.iter().enumerate() {
                let said = caps.get(i + 1).map_or("", |m| m.as_str()).to_string();
                let truth = payload.slots.get(name).and_then(|v| v.as_deref());
                out.push(Mention { what: name.clone(), consistent: truth == Some(said.as_str()), said });
            }
        }
    }

    let gain = regex(&GAIN, r"(?i)([+-]\d+(?:\.\d+)?)\s*dB\b(?:\s+at\s+(\d+)\s*Hz)?");
    for caps in gain.captures_iter(script) {
        let end = caps.get(0).map_or(0, |m| m.end());
        if script[end..].trim_start().starts_with("HL") {
            continue;
        }
        let value: f64 = caps[1].parse().unwrap_or(f64::NAN);
        let consistent = match caps.get(2).and_then(|b| b.as_str().parse::<u32>().ok()) {
            Some(band) => payload.gain_db.get(&band).is_some_and(|&g| numbers_equal(g, value)),
            None => payload.gain_db.values().any(|&g| numbers_equal(g, value)),
        };
        out.push(Mention { what: "gain_db".into(), said: caps[0].to_string(), consistent });
    }

    let days = regex(&DAYS, r"(?i)\b(\d+)\s+days?\b");
    for caps in days.captures_iter(script) {
        let consistent = caps[1].parse::<u32>().is_ok_and(|d| d == payload.adaptation_days);
        out.push(Mention { what: "adaptation_days".into(), said: caps[0].to_string(), consistent });
    }
    out
}

/// S_IC = 1 - contradicted / total mentions; 1 when nothing is checkable.
pub fn score_ic(script: &str, payload: &Payload, template: Option<&StrategyTemplate>) -> f64 {
    let mentions = ic_mentions(script, payload, template);
    if mentions.is_empty() {
        return 1.0;
    }
    let bad = mentions.iter().filter(|m| !m.consistent).count();
    1.0 - bad as f64 / mentions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::safety::Violation;
    use crate::model::{Provenance, SlotSpec, Speaker, Subproblem};
    use crate::model::{DomainRule, Predicate};
    use std::collections::BTreeMap;

    fn verdict(sev: &[RuleSeverity]) -> RegulatorVerdict {
        RegulatorVerdict {
            pass: !sev.contains(&RuleSeverity::Major),
            violations: sev
                .iter()
                .map(|&s| Violation { rule: "R".into(), severity: s, message: String::new() })
                .collect(),
        }
    }

    #[test]
    fn cs_anchors() {
        assert_eq!(score_cs(&verdict(&[])), 5.0);
        assert_eq!(score_cs(&verdict(&[RuleSeverity::Minor])), 3.0);
        assert_eq!(score_cs(&verdict(&[RuleSeverity::Major, RuleSeverity::Minor, RuleSeverity::Minor])), 1.0);
    }

    fn template8() -> StrategyTemplate {
        let slots: Vec<SlotSpec> = (0..8).map(|i| SlotSpec::new(&format!("s{i}"), "q?", &["a", "b"])).collect();
        StrategyTemplate {
            subproblem: Subproblem::Noise,
            slots,
            rules: vec![DomainRule {
                id: "r".into(),
                scope: vec!["s0".into(), "s1".into()],
                predicate: Predicate::implies(Predicate::eq("s0", "a"), Predicate::eq("s1", "a")),
                violation_message: "no".into(),
                repair_slot: "s1".into(),
            }],
            script_skeleton: "Use {s0} then {s1}.".into(),
            actions: vec![],
        }
    }

    fn rec_with(values: &[Option<&str>]) -> Recommendation {
        let slots = values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("s{i}"), v.map(str::to_string)))
            .collect();
        Recommendation {
            script: String::new(),
            payload: Payload { slots, gain_db: BTreeMap::new(), features: BTreeMap::new(), adaptation_days: 14 },
            subproblem: Subproblem::Noise,
            provenance: Provenance { session_id: "x".into(), turns: 8 },
        }
    }

    #[test]
    fn tc_fraction() {
        let t = template8();
        let all = rec_with(&[Some("a"); 8]);
        assert_eq!(score_tc(&all, &t), 1.0);
        let mut six = [Some("a"); 8];
        six[6] = None;
        six[7] = Some("zzz");
        assert_eq!(score_tc(&rec_with(&six), &t), 0.75);
        // rule s0=a -> s1=a violated: both scope members fail
        let mut broken = [Some("a"); 8];
        broken[1] = Some("b");
        assert_eq!(score_tc(&rec_with(&broken), &t), 0.75);
    }

    #[test]
    fn syllable_counter() {
        for (w, n) in [("you", 1), ("can", 1), ("this", 1), ("make", 1), ("table", 2), ("hearing", 2), ("adaptation", 4), ("the", 1), ("e", 1)] {
            assert_eq!(count_syllables(w), n, "{w}");
        }
    }

    #[test]
    fn one_syllable_sentence_is_clamped_to_five() {
        let fre = flesch_reading_ease("You can do this now.");
        // 5 words, 1 sentence, 5 syllables
        let by_hand = 206.835 - 1.015 * 5.0 - 84.6 * 1.0;
        assert!((fre - by_hand).abs() < 1e-9);
        assert!(fre > 100.0);
        assert_eq!(readability_component("You can do this now."), 5.0);
    }

    #[test]
    fn re_is_half_readability_without_checklist_hits() {
        let text = "Gain goes up at four kilohertz.";
        assert_eq!(empathy_component(text), 0.0);
        assert!((score_re(text) - readability_component(text) / 2.0).abs() < 1e-12);
    }

    fn transcript(complaint: &str) -> SessionTranscript {
        let mut t = SessionTranscript::new("s", Audiogram::uniform(40.0).unwrap(), true);
        t.push_turn(Speaker::User, complaint, None);
        t
    }

    #[test]
    fn pa_examples() {
        let t = transcript("everything is too loud");
        let script = "Because of your 4 kHz loss, we will tune the settings for the restaurant.";
        assert_eq!(score_pa(script, None, &t), 2.0);
        assert_eq!(score_pa("Please try again.", None, &t), 0.0);
    }

    #[test]
    fn pa_caps_at_five() {
        let mut t = transcript("my granddaughter sounds too loud");
        let mut rec = rec_with(&[Some("restaurant")]);
        rec.payload.slots.insert("s1".into(), Some("babble".into()));
        t.recommendation = Some(rec);
        let script = "You mentioned your granddaughter. Your audiogram shows 45 dB HL. In this restaurant the babble is loud.";
        assert_eq!(pa_categories(script, None, &t).len(), 5);
        assert_eq!(score_pa(script, None, &t), 5.0);
    }

    #[test]
    fn ic_fractions() {
        let t = template8();
        let mut rec = rec_with(&[Some("a"), Some("b")]);
        rec.payload.gain_db.insert(4000, 3.0);
        assert_eq!(score_ic("Change gain by +3 dB at 4000 Hz.", &rec.payload, None), 1.0);
        assert_eq!(ic_mentions("Your average threshold is -5 dB HL.", &rec.payload, None).len(), 0);
        // 4 mentions: s0, s1 through the skeleton, one gain, one day count; the day count is wrong
        let script = "Use a then b. Change gain by +3 dB at 4000 Hz. Allow 10 days.";
        let m = ic_mentions(script, &rec.payload, Some(&t));
        assert_eq!(m.len(), 4);
        assert_eq!(score_ic(script, &rec.payload, Some(&t)), 0.75);
        assert_eq!(score_ic("Nothing numeric here.", &rec.payload, Some(&t)), 1.0);
        assert_eq!(score_ic("Use b then b.", &rec.payload, Some(&t)), 0.5);
    }
}
