//! Prompt text is configuration: plain-text files with `{name}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::InvariantError;

const FILES: [&str; 6] = ["classify_system", "classify_user", "criteria", "judge_system", "judge_user", "user_persona"];

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub language: String,
    pub classify_system: String,
    pub classify_user: String,
    pub criteria: String,
    pub judge_system: String,
    pub judge_user: String,
    pub user_persona: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            language: "en".into(),
            classify_system: include_str!("../prompts/en/classify_system.txt").into(),
            classify_user: include_str!("../prompts/en/classify_user.txt").into(),
            criteria: include_str!("../prompts/en/criteria.txt").into(),
            judge_system: include_str!("../prompts/en/judge_system.txt").into(),
            judge_user: include_str!("../prompts/en/judge_user.txt").into(),
            user_persona: include_str!("../prompts/en/user_persona.txt").into(),
        }
    }
}

impl Prompts {
    /// Reads `{dir}/{language}/*.txt`; files that are missing keep the shipped English text.
    pub fn load_dir(dir: &Path, language: &str) -> std::io::Result<Self> {
        let mut p = Prompts { language: language.to_string(), ..Default::default() };
        let base = dir.join(language);
        for name in FILES {
            let path = base.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            let slot = match name {
                "classify_system" => &mut p.classify_system,
                "classify_user" => &mut p.classify_user,
                "criteria" => &mut p.criteria,
                "judge_system" => &mut p.judge_system,
                "judge_user" => &mut p.judge_user,
                _ => &mut p.user_persona,
            };
            *slot = text;
        }
        Ok(p)
    }
}

/// Replaces `{key}` for every key in `vars`; other braces are left alone.
pub fn fill(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Strict variant for script skeletons: every `{name}` must be supplied.
pub fn fill_strict(template: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, InvariantError> {
    let re = placeholder_regex();
    let mut missing = None;
    let out = re.replace_all(template, |caps: &regex::Captures| match lookup(&caps[1]) {
        Some(v) => v,
        None => {
            missing.get_or_insert_with(|| caps[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(InvariantError::new("script skeleton", format!("placeholder {{{name}}} has no value"))),
        None => Ok(out.into_owned()),
    }
}

pub(crate) fn placeholder_regex() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\{([A-Za-z0-9_]+)\}").expect("static regex"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_known_keys_only() {
        let vars = BTreeMap::from([("complaint", "too loud".to_string())]);
        assert_eq!(fill("C: {complaint} {other}", &vars), "C: too loud {other}");
    }

    #[test]
    fn strict_fill() {
        let out = fill_strict("Reduce gain in {band} by {step} dB", |k| match k {
            "band" => Some("4kHz".into()),
            "step" => Some("3".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(out, "Reduce gain in 4kHz by 3 dB");
        let err = fill_strict("{a} and {b}", |k| (k == "a").then(|| "x".to_string())).unwrap_err();
        assert!(err.message.contains("{b}"));
    }

    #[test]
    fn shipped_prompts_have_placeholders() {
        let p = Prompts::default();
        assert!(p.classify_system.contains("{criteria}"));
        assert!(p.classify_user.contains("{complaint}"));
        for label in crate::model::Subproblem::ALL {
            assert!(p.criteria.contains(&format!("- {}:", label.as_str())));
        }
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("xx")).unwrap();
        std::fs::write(dir.path().join("xx/criteria.txt"), "custom").unwrap();
        let p = Prompts::load_dir(dir.path(), "xx").unwrap();
        assert_eq!(p.criteria, "custom");
        assert_eq!(p.classify_user, Prompts::default().classify_user);
        assert_eq!(p.language, "xx");
    }
}
