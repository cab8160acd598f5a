use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

pub const TAG_CLASSIFY: &str = "classify";
pub const TAG_COMPLAINT: &str = "user:complaint";
pub const TAG_ASK_SLOT: &str = "user:ask_slot:";
pub const TAG_ASK_REPAIR: &str = "user:ask_repair:";

/// Fixed persona answers for the user side of a conversation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserScript {
    pub complaint: String,
    pub answers: BTreeMap<String, String>,
}

/// Deterministic backend: the keyword lexicon for `classify` and, when given a
/// [`UserScript`], answer lookup for `user:*` tags.
pub struct RuleBackend {
    lexicon: Lexicon,
    user: Option<UserScript>,
}

impl RuleBackend {
    pub fn new() -> Self {
        Self { lexicon: Lexicon::shipped().clone(), user: None }
    }

    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        Self { lexicon, user: None }
    }

    pub fn with_user(mut self, script: UserScript) -> Self {
        self.user = Some(script);
        self
    }

    fn unknown(&self, tag: &str) -> LlmError {
        LlmError::UnknownTag { backend: self.id().to_string(), tag: tag.to_string() }
    }

    fn answer(&self, tag: &str) -> Result<String, LlmError> {
        let user = self.user.as_ref().ok_or_else(|| self.unknown(tag))?;
        if tag == TAG_COMPLAINT {
            return Ok(user.complaint.clone());
        }
        let slot = tag
            .strip_prefix(TAG_ASK_SLOT)
            .or_else(|| tag.strip_prefix(TAG_ASK_REPAIR))
            .ok_or_else(|| self.unknown(tag))?;
        user.answers.get(slot).cloned().ok_or_else(|| self.unknown(tag))
    }
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatBackend for RuleBackend {
    fn id(&self) -> &str {
        "rule"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let text = if request.tag == TAG_CLASSIFY {
            let complaint = request.last_user().unwrap_or("");
            self.lexicon.classify(complaint).map_or("unknown", |s| s.as_str()).to_string()
        } else if request.tag.starts_with("user:") {
            self.answer(&request.tag)?
        } else {
            return Err(self.unknown(&request.tag));
        };
        Ok(ChatResponse::stop(text, self.id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(text: &str) -> String {
        RuleBackend::new().complete(&ChatRequest::new(TAG_CLASSIFY, "criteria", text)).unwrap().text
    }

    #[test]
    fn classify_dispatch() {
        assert_eq!(classify("voices sound echoey and hollow"), "distortion");
        assert_eq!(classify("hmm"), "unknown");
    }

    #[test]
    fn user_answers() {
        let script = UserScript {
            complaint: "too loud".into(),
            answers: BTreeMap::from([("band".to_string(), "4000".to_string())]),
        };
        let b = RuleBackend::new().with_user(script);
        let ask = |tag: &str| b.complete(&ChatRequest::new(tag, "s", "q"));
        assert_eq!(ask("user:complaint").unwrap().text, "too loud");
        assert_eq!(ask("user:ask_slot:band").unwrap().text, "4000");
        assert_eq!(ask("user:ask_repair:band").unwrap().text, "4000");
        assert!(matches!(ask("user:ask_slot:other"), Err(LlmError::UnknownTag { .. })));
        assert!(matches!(ask("judge:s_cs"), Err(LlmError::UnknownTag { .. })));
    }

    #[test]
    fn no_persona_means_no_user_answers() {
        let b = RuleBackend::new();
        assert!(b.complete(&ChatRequest::new("user:complaint", "s", "q")).is_err());
    }
}
