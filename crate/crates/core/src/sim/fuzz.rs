//! Random strategy books for property tests of the dialogue engine.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scenario::sample_consistent_answers;
use crate::model::{
    ActionRow, DomainRule, Predicate, SlotSpec, StrategyBook, StrategyTemplate, Subproblem, FREQUENCIES_HZ,
    SLOTS_PER_TEMPLATE,
};

fn random_slot(rng: &mut ChaCha8Rng, i: usize) -> SlotSpec {
    let k = rng.gen_range(2..=5);
    let values: Vec<String> = (0..k).map(|j| format!("v{j}")).collect();
    let refs: Vec<&str> = values.iter().map(String::as_str).collect();
    let mut spec = SlotSpec::new(&format!("s{i}"), &format!("Question {i}?"), &refs);
    if rng.gen_bool(0.3) {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let drift: f64 = 1.0 - p.iter().sum::<f64>();
        p[0] += drift;
        spec.prior = Some(p);
    }
    spec
}

fn random_rule(rng: &mut ChaCha8Rng, slots: &[SlotSpec], id: usize) -> DomainRule {
    let mut pick: Vec<usize> = (0..slots.len()).collect();
    pick.shuffle(rng);
    let (a, b) = (&slots[pick[0]], &slots[pick[1]]);
    let va = a.allowed.choose(rng).expect("values").clone();
    let vb = b.allowed.choose(rng).expect("values").clone();
    let then = if rng.gen_bool(0.5) { Predicate::ne(&b.id, &vb) } else { Predicate::eq(&b.id, &vb) };
    let repair = if rng.gen_bool(0.7) { b.id.clone() } else { a.id.clone() };
    DomainRule {
        id: format!("r{id}"),
        scope: vec![a.id.clone(), b.id.clone()],
        predicate: Predicate::implies(Predicate::eq(&a.id, &va), then),
        violation_message: format!("That does not fit with {}.", a.id),
        repair_slot: repair,
    }
}

fn random_actions(rng: &mut ChaCha8Rng, slots: &[SlotSpec]) -> Vec<ActionRow> {
    (0..rng.gen_range(0..=3))
        .map(|_| {
            let mut row = ActionRow::default();
            if rng.gen_bool(0.7) {
                let s = slots.choose(rng).expect("slots");
                row.when.insert(s.id.clone(), s.allowed.choose(rng).expect("values").clone());
            }
            for _ in 0..rng.gen_range(0..=2) {
                let band = *FREQUENCIES_HZ.choose(rng).expect("bands");
                // occasionally beyond the safety cap, so the regulator gate is exercised
                let g = if rng.gen_bool(0.1) { 8.0 } else { rng.gen_range(-6..=6) as f64 };
                row.gain_db.insert(band, g);
            }
            if rng.gen_bool(0.3) {
                row.adaptation_days = Some(rng.gen_range(3..=21));
            }
            row
        })
        .collect()
}

/// A valid 8-slot template that admits at least one rule-consistent assignment.
pub fn random_template(rng: &mut ChaCha8Rng, subproblem: Subproblem) -> StrategyTemplate {
    loop {
        let slots: Vec<SlotSpec> = (0..SLOTS_PER_TEMPLATE).map(|i| random_slot(rng, i)).collect();
        let rules: Vec<DomainRule> = (0..rng.gen_range(0..=3)).map(|i| random_rule(rng, &slots, i)).collect();
        let mut named: Vec<&SlotSpec> = slots.iter().collect();
        named.shuffle(rng);
        let skeleton = format!("We looked at {{{}}} and {{{}}}. Let us know how it goes.", named[0].id, named[1].id);
        let actions = random_actions(rng, &slots);
        let mut t = StrategyTemplate { subproblem, slots, rules, script_skeleton: skeleton, actions };
        if subproblem == Subproblem::BlockedEars {
            t.actions.insert(0, ActionRow {
                features: BTreeMap::from([("physical_inspection".to_string(), "advised".to_string())]),
                ..Default::default()
            });
        }
        if t.validate().is_ok() && sample_consistent_answers(rng, &t, 2_000).is_some() {
            return t;
        }
    }
}

pub fn random_book(rng: &mut ChaCha8Rng) -> StrategyBook {
    let templates = Subproblem::ALL.into_iter().map(|s| random_template(rng, s)).collect();
    StrategyBook::new(templates).expect("random templates are valid")
}
