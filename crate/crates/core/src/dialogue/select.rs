use crate::model::{SlotAssignment, SlotSpec, StrategyTemplate};

use super::DialogueError;

/// Next question: the empty mandatory slot maximising H(slot) / |S_empty|,
/// earliest in template order on ties.
pub fn select_slot<'t>(assignment: &SlotAssignment, template: &'t StrategyTemplate) -> Result<&'t SlotSpec, DialogueError> {
    let empty = assignment.empty_mandatory(template);
    let n = empty.len() as f64;
    let mut best: Option<(&SlotSpec, f64)> = None;
    for spec in empty {
        let score = spec.entropy_bits() / n;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((spec, score));
        }
    }
    best.map(|(s, _)| s).ok_or(DialogueError::NoEmptySlot)
}

/// Case-folded, trimmed, inner whitespace collapsed, trailing punctuation dropped.
pub fn normalize_answer(raw: &str) -> String {
    let folded = raw.trim().to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches(['.', '!', '?', ',', ';']).trim_end().to_string()
}

/// Exact match first, then a prefix shared by exactly one allowed value.
pub fn match_answer<'s>(raw: &str, spec: &'s SlotSpec) -> Option<&'s str> {
    let answer = normalize_answer(raw);
    if answer.is_empty() {
        return None;
    }
    if let Some(v) = spec.allowed.iter().find(|v| v.to_lowercase() == answer) {
        return Some(v);
    }
    let mut prefixed = spec.allowed.iter().filter(|v| v.to_lowercase().starts_with(&answer));
    match (prefixed.next(), prefixed.next()) {
        (Some(v), None) => Some(v),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Subproblem;

    fn template(slots: Vec<SlotSpec>) -> StrategyTemplate {
        StrategyTemplate { subproblem: Subproblem::Noise, slots, rules: vec![], script_skeleton: String::new(), actions: vec![] }
    }

    #[test]
    fn higher_cardinality_wins() {
        let t = template(vec![SlotSpec::new("a", "?", &["x", "y"]), SlotSpec::new("b", "?", &["x", "y", "z"])]);
        let a = SlotAssignment::empty(&t);
        assert_eq!(select_slot(&a, &t).unwrap().id, "b");
    }

    #[test]
    fn ties_go_to_template_order() {
        let t = template(vec![
            SlotSpec::new("c", "?", &["x", "y"]),
            SlotSpec::new("a", "?", &["x", "y"]),
            SlotSpec::new("b", "?", &["x", "y"]),
        ]);
        let mut a = SlotAssignment::empty(&t);
        assert_eq!(select_slot(&a, &t).unwrap().id, "c");
        a.set("c", "x", 1);
        assert_eq!(select_slot(&a, &t).unwrap().id, "a");
        a.set("a", "x", 2);
        a.set("b", "y", 3);
        assert!(matches!(select_slot(&a, &t), Err(DialogueError::NoEmptySlot)));
    }

    #[test]
    fn skewed_prior_loses_to_uniform_binary() {
        let mut skewed = SlotSpec::new("skewed", "?", &["x", "y"]);
        skewed.prior = Some(vec![0.99, 0.01]);
        let h = -(0.99f64 * 0.99f64.log2() + 0.01 * 0.01f64.log2());
        assert!((skewed.entropy_bits() - h).abs() < 1e-12);
        assert!((h - 0.0808).abs() < 1e-4);
        let t = template(vec![skewed, SlotSpec::new("flat", "?", &["x", "y"])]);
        assert_eq!(select_slot(&SlotAssignment::empty(&t), &t).unwrap().id, "flat");
    }

    #[test]
    fn optional_slots_are_never_asked() {
        let mut opt = SlotSpec::new("opt", "?", &["1", "2", "3", "4"]);
        opt.mandatory = false;
        let t = template(vec![opt, SlotSpec::new("m", "?", &["x", "y"])]);
        assert_eq!(select_slot(&SlotAssignment::empty(&t), &t).unwrap().id, "m");
    }

    #[test]
    fn answer_matching() {
        let spec = SlotSpec::new("g", "?", &["male", "female", "similar"]);
        assert_eq!(match_answer("Female", &spec), Some("female"));
        assert_eq!(match_answer("  FEMALE. ", &spec), Some("female"));
        assert_eq!(match_answer("fem", &spec), Some("female"));
        assert_eq!(match_answer("s", &spec), Some("similar"));
        assert_eq!(match_answer("ma", &spec), Some("male"));
        assert_eq!(match_answer("unsure", &spec), None);
        assert_eq!(match_answer("", &spec), None);
        let spec = SlotSpec::new("d", "?", &["too loud", "too soft"]);
        assert_eq!(match_answer("too", &spec), None);
        assert_eq!(match_answer("Too   Soft", &spec), Some("too soft"));
    }
}
