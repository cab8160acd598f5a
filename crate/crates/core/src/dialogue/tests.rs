use std::collections::BTreeMap;

use super::*;
use crate::llm::{ReplayBackend, RuleBackend};
use crate::model::{ActionRow, Predicate, SceneClass};

fn engine() -> Engine {
    Engine::new(Arc::new(StrategyBook::default_book()), Arc::new(RuleBackend::new()), EngineConfig::default())
}

fn audiogram() -> Audiogram {
    Audiogram::new([20.0, 25.0, 30.0, 40.0, 50.0, 55.0, 60.0, 65.0]).unwrap()
}

fn started(e: &Engine, parser: bool) -> SessionState {
    let scene = parser.then(|| SceneVector::certain(SceneClass::Noise, 975));
    e.start_session("t1", audiogram(), scene, parser).unwrap()
}

/// Answers every question from `answers`, falling back to the slot's first allowed value.
fn drive(e: &Engine, mut state: SessionState, first: AgentTurn, answers: &BTreeMap<&str, Vec<&str>>) -> (SessionState, AgentTurn, Vec<AgentTurn>) {
    let mut cursor: BTreeMap<String, usize> = BTreeMap::new();
    let mut turn = first;
    let mut seen = vec![turn.clone()];
    while let Some(slot) = turn.slot().map(str::to_string) {
        let k = cursor.entry(slot.clone()).or_default();
        let reply = match answers.get(slot.as_str()) {
            Some(list) => list[(*k).min(list.len() - 1)].to_string(),
            None => state.template.as_ref().unwrap().slot(&slot).unwrap().allowed[0].clone(),
        };
        *k += 1;
        let (next, t) = e.step(&state, &reply).unwrap();
        assert!(next.turn <= next.turn_limit);
        state = next;
        turn = t;
        seen.push(turn.clone());
    }
    (state, turn, seen)
}

#[test]
fn parser_enabled_quiet_scene() {
    let e = engine();
    let s = e.start_session("q", audiogram(), Some(SceneVector::certain(SceneClass::Quiet, 0)), true).unwrap();
    assert_eq!(s.state_vector.scene_label(), SceneClass::Quiet);
    assert_eq!(s.phase, Phase::AwaitingComplaint);
    assert!(matches!(e.start_session("q", audiogram(), None, true), Err(DialogueError::MissingScene)));
    let off = e.start_session("q", audiogram(), None, false).unwrap();
    assert_eq!(off.state_vector.scene_part(), &[1.0 / 3.0; 3]);
}

#[test]
fn invalid_audiogram_is_refused() {
    let bad: Audiogram = serde_json::from_str("[0,0,0,0,0,0,0,500]").unwrap();
    assert!(matches!(engine().open_session("x", bad, false), Err(DialogueError::Refusal(_))));
}

#[test]
fn awaiting_context_until_scene() {
    let e = engine();
    let s = e.open_session("c", audiogram(), true).unwrap();
    assert_eq!(s.phase, Phase::AwaitingContext);
    let err = e.step(&s, "it whistles").unwrap_err();
    assert!(matches!(err.source, DialogueError::AwaitingContext));
    let s = e.update_scene(&s, SceneVector::certain(SceneClass::Conversation, 10)).unwrap();
    assert_eq!(s.phase, Phase::AwaitingComplaint);
    let off = e.open_session("d", audiogram(), false).unwrap();
    assert!(matches!(e.update_scene(&off, SceneVector::uniform(0)), Err(DialogueError::ParserDisabled)));
}

#[test]
fn classification_examples() {
    let e = engine();
    assert_eq!(e.classify_subproblem("there's a whistling squeal near my ear").unwrap(), Subproblem::Howl);
    assert_eq!(e.classify_subproblem("everything is too loud").unwrap(), Subproblem::Loudness);
    assert!(matches!(e.classify_subproblem("  "), Err(DialogueError::EmptyComplaint)));
    let replay = e.with_backend(Arc::new(ReplayBackend::from_pairs([("classify", "clarity")])));
    assert_eq!(replay.classify_subproblem("it whistles").unwrap(), Subproblem::Clarity);
}

#[test]
fn unparseable_classification_retries_twice() {
    let replay = Arc::new(ReplayBackend::from_pairs([
        ("classify", "no idea"),
        ("classify", "noise or howl"),
        ("classify", "hmm"),
        ("classify", "noise"),
    ]));
    let e = engine().with_backend(replay.clone());
    match e.classify_subproblem("x") {
        Err(DialogueError::Unclassifiable { raw }) => assert_eq!(raw, "hmm"),
        other => panic!("{other:?}"),
    }
    assert_eq!(replay.remaining(), 1);
}

#[test]
fn reply_parsing() {
    assert_eq!(parse_subproblem("blocked ears"), Some(Subproblem::BlockedEars));
    assert_eq!(parse_subproblem("Label: howl."), Some(Subproblem::Howl));
    assert_eq!(parse_subproblem("noise, not howl"), None);
    assert_eq!(parse_subproblem("noisy"), None);
}

#[test]
fn complaint_starts_slot_filling_with_max_entropy_slot() {
    let e = engine();
    let s = started(&e, true);
    let (s, turn) = e.step(&s, "buzzing noise everywhere").unwrap();
    assert_eq!(s.phase, Phase::SlotFilling);
    assert_eq!(s.subproblem, Some(Subproblem::Noise));
    assert_eq!(turn.kind, TurnKind::AskSlot { slot: "environment".into() });
    let t = s.template.as_ref().unwrap();
    assert_eq!(select_slot(s.assignment.as_ref().unwrap(), t).unwrap().id, "environment");
    assert_eq!(s.turn, 0);
    assert_eq!(turn.options.len(), 6);
}

#[test]
fn noise_happy_path_completes_in_eight() {
    let e = engine();
    let s = started(&e, true);
    let (s, first) = e.step(&s, "buzzing noise everywhere").unwrap();
    let answers = BTreeMap::from([("environment", vec!["Restaurant"]), ("noise_source", vec!["bab"])]);
    let (s, last, _) = drive(&e, s, first, &answers);
    assert_eq!(s.outcome(), Some(Outcome::Completed));
    assert_eq!(s.turn, 8);
    assert_eq!(s.transcript.answer_turns(), 8);
    let rec = match last.kind {
        TurnKind::Deliver { recommendation } => recommendation,
        other => panic!("{other:?}"),
    };
    assert_eq!(rec.payload.slots["environment"].as_deref(), Some("restaurant"));
    assert_eq!(rec.payload.features["directionality"], "adaptive");
    assert!(regulate(&rec, Some(&s.audiogram), None, SafetyConfig::shipped()).pass);
    assert_eq!(s.transcript.recommendation.as_ref(), Some(&rec));
    let again = SessionTranscript::from_jsonl(&s.transcript.to_jsonl()).unwrap();
    assert_eq!(again, s.transcript);

    let err = e.step(&s, "hello").unwrap_err();
    assert_eq!(err.to_string(), "session t1 (done(completed)): session closed");
}

#[test]
fn without_parser_ten_turns() {
    let e = engine();
    let s = started(&e, false);
    let (s, first) = e.step(&s, "buzzing noise everywhere").unwrap();
    assert_eq!(s.template.as_ref().unwrap().slots.len(), 10);
    let (s, _, seen) = drive(&e, s, first, &BTreeMap::new());
    assert_eq!(s.outcome(), Some(Outcome::Completed));
    assert_eq!(s.turn, 10);
    assert!(seen.iter().any(|t| t.slot() == Some(crate::model::CONTEXT_SLOT_TYPE)));
    assert_eq!(s.recommendation.unwrap().payload.slots.len(), 10);
}

#[test]
fn repair_clears_the_repair_slot() {
    let e = engine();
    let s = started(&e, true);
    let (s, first) = e.step(&s, "it whistles all the time").unwrap();
    assert_eq!(s.subproblem, Some(Subproblem::Howl));
    let answers = BTreeMap::from([("trigger", vec!["always"]), ("frequency", vec!["daily", "constantly"])]);
    let (s, last, seen) = drive(&e, s, first, &answers);
    let repair_at = seen
        .iter()
        .position(|t| t.kind == TurnKind::AskRepair { rule: "always_constant".into(), slot: "frequency".into() })
        .expect("a repair question");
    assert!(seen[..repair_at].iter().any(|t| t.slot() == Some("frequency")));
    assert!(matches!(last.kind, TurnKind::Deliver { .. }));
    assert_eq!(s.turn, 9);
    assert_eq!(s.recommendation.unwrap().payload.slots["frequency"].as_deref(), Some("constantly"));
}

#[test]
fn repairing_state_after_violation() {
    let e = engine();
    let s = started(&e, true);
    let (mut s, mut turn) = e.step(&s, "it whistles").unwrap();
    let answers = BTreeMap::from([("trigger", "always"), ("frequency", "daily")]);
    loop {
        let slot = turn.slot().unwrap().to_string();
        let reply = answers.get(slot.as_str()).copied().unwrap_or("no");
        let reply = if answers.contains_key(slot.as_str()) { reply.to_string() } else {
            s.template.as_ref().unwrap().slot(&slot).unwrap().allowed[0].clone()
        };
        let (n, t) = e.step(&s, &reply).unwrap();
        s = n;
        turn = t;
        if let Phase::Repairing { rule } = &s.phase {
            assert_eq!(rule, "always_constant");
            assert_eq!(s.assignment.as_ref().unwrap().get("frequency"), None);
            assert_eq!(s.assignment.as_ref().unwrap().get("trigger"), Some("always"));
            assert_eq!(turn.slot(), Some("frequency"));
            break;
        }
    }
}

#[test]
fn unmatched_answers_consume_turns_until_the_limit() {
    let e = engine();
    let s = started(&e, true);
    let (mut s, first) = e.step(&s, "buzzing noise everywhere").unwrap();
    let first_slot = first.slot().unwrap().to_string();
    let (n, again) = e.step(&s, "banana").unwrap();
    assert_eq!(n.turn, 1);
    assert_eq!(again.slot(), Some(first_slot.as_str()));
    assert!(again.text.contains("restaurant, street, office, home, car, party"));
    s = n;
    let mut last = again;
    for _ in 1..10 {
        let (n, t) = e.step(&s, "banana").unwrap();
        s = n;
        last = t;
    }
    assert_eq!(s.turn, 10);
    assert_eq!(s.outcome(), Some(Outcome::TurnLimitReached));
    assert!(matches!(last.kind, TurnKind::Abort { .. }));
    assert!(s.recommendation.is_none());
}

#[test]
fn tenth_turn_with_one_empty_slot_aborts() {
    let e = engine();
    let s = started(&e, true);
    let (mut s, mut turn) = e.step(&s, "buzzing noise everywhere").unwrap();
    for _ in 0..3 {
        let (n, t) = e.step(&s, "banana").unwrap();
        s = n;
        turn = t;
    }
    while let Some(slot) = turn.slot().map(str::to_string) {
        let v = s.template.as_ref().unwrap().slot(&slot).unwrap().allowed[0].clone();
        let (n, t) = e.step(&s, &v).unwrap();
        s = n;
        turn = t;
    }
    assert_eq!(s.turn, 10);
    assert_eq!(s.slots_remaining(), 1);
    assert_eq!(s.outcome(), Some(Outcome::TurnLimitReached));
}

fn tiny_book(gain: f64) -> StrategyBook {
    let mut book: Vec<StrategyTemplate> = StrategyBook::default_book().templates().to_vec();
    let loud = book.iter_mut().find(|t| t.subproblem == Subproblem::Loudness).unwrap();
    loud.actions = vec![ActionRow { gain_db: BTreeMap::from([(4000, gain)]), ..Default::default() }];
    StrategyBook::new(book).unwrap()
}

#[test]
fn regulator_failure_aborts() {
    let e = Engine::new(Arc::new(tiny_book(9.0)), Arc::new(RuleBackend::new()), EngineConfig::default());
    let s = started(&e, true);
    let (s, first) = e.step(&s, "everything is too loud").unwrap();
    let (s, last, _) = drive(&e, s, first, &BTreeMap::new());
    assert_eq!(s.outcome(), Some(Outcome::Aborted));
    assert!(s.recommendation.is_none());
    assert!(s.verdict.as_ref().unwrap().has_major());
    match last.kind {
        TurnKind::Abort { reason } => assert!(reason.contains("R1")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rules_are_checked_in_book_order() {
    let mut t = StrategyBook::default_book().get(Subproblem::Noise).unwrap().clone();
    // a second rule over the same pair, listed after car_seating
    t.rules.push(DomainRule {
        id: "car_front".into(),
        scope: vec!["environment".into(), "talker_position".into()],
        predicate: Predicate::implies(Predicate::eq("environment", "car"), Predicate::ne("talker_position", "front")),
        violation_message: "dup".into(),
        repair_slot: "environment".into(),
    });
    let mut a = SlotAssignment::empty(&t);
    a.set("environment", "car", 1);
    a.set("talker_position", "front", 2);
    assert_eq!(first_violation(&t, &a).unwrap().id, "car_seating");
}

#[test]
fn agent_turn_json_shape() {
    let t = AgentTurn { kind: TurnKind::AskSlot { slot: "band".into() }, text: "Which band?".into(), options: vec!["low".into()] };
    let v: serde_json::Value = serde_json::from_str(&crate::json::to_string(&t)).unwrap();
    assert_eq!(v["kind"], "ask_slot");
    assert_eq!(v["slot"], "band");
    let back: AgentTurn = crate::json::from_str(&crate::json::to_string(&t)).unwrap();
    assert_eq!(back, t);
}
