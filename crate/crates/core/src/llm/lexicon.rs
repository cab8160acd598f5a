use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{FormatError, InvariantError};
use crate::json;
use crate::model::Subproblem;

/// Keyword stems per subproblem. Matching is substring-based on lower-cased text.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: Vec<(Subproblem, Vec<String>)>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let raw: BTreeMap<String, Vec<String>> = json::from_str(text)?;
        let mut entries = Vec::new();
        for (label, words) in raw {
            let sub = Subproblem::parse(&label)
                .ok_or_else(|| InvariantError::new("lexicon", format!("unknown subproblem `{label}`")))?;
            if words.iter().any(|w| w.trim().is_empty()) {
                return Err(InvariantError::new(format!("lexicon.{label}"), "empty keyword").into());
            }
            entries.push((sub, words.iter().map(|w| w.to_lowercase()).collect()));
        }
        entries.sort_by_key(|(s, _)| s.index());
        Ok(Self { entries })
    }

    pub fn shipped() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(include_str!("../../data/lexicon.json")).expect("shipped lexicon is valid"))
    }

    /// Longest matching keyword wins; equal lengths go to the earlier label.
    pub fn classify(&self, text: &str) -> Option<Subproblem> {
        let text = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
        let mut best: Option<(usize, Subproblem)> = None;
        for (sub, words) in &self.entries {
            for w in words {
                if text.contains(w.as_str()) && best.is_none_or(|(len, _)| w.chars().count() > len) {
                    best = Some((w.chars().count(), *sub));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().flat_map(|(_, w)| w.iter().map(String::as_str))
    }
}

pub fn classify_text(text: &str) -> Option<Subproblem> {
    Lexicon::shipped().classify(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_examples() {
        assert_eq!(classify_text("there's a whistling squeal near my ear"), Some(Subproblem::Howl));
        assert_eq!(classify_text("everything is too loud"), Some(Subproblem::Loudness));
        assert_eq!(classify_text("voices sound echoey and hollow"), Some(Subproblem::Distortion));
        assert_eq!(classify_text("buzzing noise everywhere"), Some(Subproblem::Noise));
        assert_eq!(classify_text("a loud whistling"), Some(Subproblem::Howl));
        assert_eq!(classify_text("My ears feel BLOCKED"), Some(Subproblem::BlockedEars));
        assert_eq!(classify_text("I can\u{2019}t understand my grandson"), Some(Subproblem::Clarity));
        assert_eq!(classify_text("nothing to report"), None);
    }

    #[test]
    fn equal_length_goes_to_label_order() {
        let lex = Lexicon::parse(r#"{"howl": ["abc"], "noise": ["xyz"]}"#).unwrap();
        assert_eq!(lex.classify("xyz abc"), Some(Subproblem::Noise));
    }

    #[test]
    fn unknown_label_rejected() {
        assert!(Lexicon::parse(r#"{"hum": ["a"]}"#).unwrap_err().is_invariant());
    }
}
