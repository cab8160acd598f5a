mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine as _;
use cafa_core::model::{SessionTranscript, StrategyBook};
use cafa_core::sim::{generate_scenarios, GeneratorConfig};
use cafa_service::ServiceConfig;
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn create(router: &axum::Router, body: Value) -> String {
    let r = post(router, "/v1/sessions", &body).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    r.json()["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn complaint_moves_session_into_slot_filling() {
    let schemas = Schemas::load();
    let (router, _) = app();
    let r = post(&router, "/v1/sessions", &json!({"audiogram": MILD, "parser_enabled": true})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    schemas.check("create_session_response", &r.json());
    assert_eq!(r.json()["phase"], "awaiting_context");
    let id = r.json()["session_id"].as_str().unwrap().to_string();

    // no scene yet: the conversation cannot start
    let early = post(&router, &format!("/v1/sessions/{id}/message"), &json!({"text": "loud whistling"})).await;
    assert_eq!(early.status, StatusCode::CONFLICT);
    assert_eq!(early.json()["code"], "awaiting_context");
    schemas.check("error", &early.json());

    let s = post(&router, &format!("/v1/sessions/{id}/scene"), &json!({"posteriors": [0.2, 0.7, 0.1]})).await;
    assert_eq!(s.status, StatusCode::OK, "{}", s.text());
    schemas.check("scene_response", &s.json());
    assert_eq!(s.json()["scene_label"], "noise");
    assert_eq!(s.json()["phase"], "awaiting_complaint");

    let m = post(&router, &format!("/v1/sessions/{id}/message"), &json!({"text": "loud whistling"})).await;
    assert_eq!(m.status, StatusCode::OK, "{}", m.text());
    let body = m.json();
    schemas.check("message_response", &body);
    assert_eq!(body["phase"], "slot_filling");
    assert_eq!(body["agent_turn"]["kind"], "ask_slot");
    assert_eq!(body["turn"], 0);
    assert_eq!(body["slots_remaining"], 8);
}

#[tokio::test]
async fn scripted_session_to_recommendation_and_judge() {
    let schemas = Schemas::load();
    let (router, _) = app();
    let book = StrategyBook::default_book();
    let scenario = generate_scenarios(6, 21, &book, &GeneratorConfig::default()).remove(2);
    let id = create(
        &router,
        json!({"audiogram": scenario.audiogram, "scene": {"posteriors": scenario.scene.posteriors()}}),
    )
    .await;
    let url = format!("/v1/sessions/{id}/message");
    let mut reply = post(&router, &url, &json!({"text": scenario.complaint})).await;
    let mut answers = 0;
    loop {
        assert_eq!(reply.status, StatusCode::OK, "{}", reply.text());
        let body = reply.json();
        schemas.check("message_response", &body);
        let turn = &body["agent_turn"];
        if turn["kind"] != "ask_slot" {
            assert_eq!(turn["kind"], "deliver");
            assert_eq!(body["phase"], "done");
            assert_eq!(body["outcome"], "completed");
            break;
        }
        let slot = turn["slot"].as_str().unwrap();
        let answer = &scenario.hidden_answers[slot];
        assert!(turn["options"].as_array().unwrap().iter().any(|o| o == answer.as_str()));
        reply = post(&router, &url, &json!({"text": answer})).await;
        answers += 1;
    }
    assert_eq!(answers, 8);
    let rec = reply.json()["agent_turn"]["recommendation"].clone();
    schemas.check("recommendation", &rec);

    let view = get(&router, &format!("/v1/sessions/{id}")).await;
    assert_eq!(view.status, StatusCode::OK);
    schemas.check("session_view", &view.json());
    assert!(view.json()["slots"].as_array().unwrap().iter().all(|s| s["value"].is_string()));

    let t = get(&router, &format!("/v1/sessions/{id}/transcript")).await;
    assert_eq!(t.status, StatusCode::OK);
    assert_eq!(t.content_type.as_deref(), Some("application/x-ndjson"));
    for line in t.text().lines() {
        schemas.check("transcript_event", &serde_json::from_str(line).unwrap());
    }
    let transcript = SessionTranscript::from_jsonl(&t.text()).unwrap();
    assert_eq!(transcript.answer_turns(), 8);

    let j = post(&router, "/v1/judge", &json!({"transcript": t.text(), "recommendation": rec})).await;
    assert_eq!(j.status, StatusCode::OK, "{}", j.text());
    schemas.check("judge_report", &j.json());
    assert_eq!(j.json()["s_tc"], 1.0);
    assert!([1.0, 3.0, 5.0].contains(&j.json()["s_cs"].as_f64().unwrap()));
    // the event-array form gives the same report
    let events: Vec<Value> = t.text().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let j2 = post(&router, "/v1/judge", &json!({"transcript": events, "recommendation": rec})).await;
    assert_eq!(j2.body, j.body);

    let after = post(&router, &url, &json!({"text": "hello?"})).await;
    assert_eq!(after.status, StatusCode::CONFLICT);
    assert_eq!(after.json()["code"], "session_done");
    schemas.check("error", &after.json());
}

#[tokio::test]
async fn expired_session_is_a_conflict() {
    let schemas = Schemas::load();
    let (router, app) = app_with(ServiceConfig { session_ttl_secs: 0.05, ..Default::default() });
    let id = create(&router, json!({"audiogram": MILD, "parser_enabled": false})).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    let r = post(&router, &format!("/v1/sessions/{id}/message"), &json!({"text": "it whistles"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "session_expired");
    schemas.check("error", &r.json());

    // after reaping the tombstone keeps answering 409
    let id2 = create(&router, json!({"audiogram": MILD, "parser_enabled": false})).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(app.store.reap(), 1);
    let r = post(&router, &format!("/v1/sessions/{id2}/message"), &json!({"text": "it whistles"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(get(&router, &format!("/v1/sessions/{id2}/transcript")).await.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn error_statuses_use_the_uniform_body() {
    let schemas = Schemas::load();
    let (router, _) = app();
    let cases = [
        (post(&router, "/v1/sessions", &json!({"audiogram": [10.0, 20.0]})).await, StatusCode::UNPROCESSABLE_ENTITY, "invalid_audiogram"),
        (
            post(&router, "/v1/sessions", &json!({"audiogram": [0, 0, 0, 0, 0, 0, 0, 130]})).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_audiogram",
        ),
        (post(&router, "/v1/sessions", &json!({"parser_enabled": true})).await, StatusCode::UNPROCESSABLE_ENTITY, "invalid_body"),
        (post(&router, "/v1/sessions/nope/scene", &json!({"posteriors": [0.2, 0.3, 0.5]})).await, StatusCode::NOT_FOUND, "not_found"),
        (post(&router, "/v1/sessions/nope/message", &json!({"text": "x"})).await, StatusCode::NOT_FOUND, "not_found"),
        (get(&router, "/v1/sessions/nope/transcript").await, StatusCode::NOT_FOUND, "not_found"),
        (get(&router, "/v1/nothing").await, StatusCode::NOT_FOUND, "not_found"),
        (get(&router, "/v1/classify").await, StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed"),
        (post(&router, "/v1/classify", &json!({})).await, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
        (post(&router, "/v1/classify", &json!({"embedding": [1.0, 2.0]})).await, StatusCode::UNPROCESSABLE_ENTITY, "invalid_embedding"),
        (post(&router, "/v1/classify", &json!({"wav": "!!!"})).await, StatusCode::UNPROCESSABLE_ENTITY, "invalid_audio"),
        (
            post(&router, "/v1/judge", &json!({"transcript": "{}", "recommendation": {"script": "x"}})).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
        ),
    ];
    for (reply, status, code) in cases {
        assert_eq!(reply.status, status, "{}", reply.text());
        assert_eq!(reply.json()["code"], code);
        schemas.check("error", &reply.json());
    }

    let raw = Request::post("/v1/sessions").header("content-type", "application/json").body(Body::from("{not json")).unwrap();
    let r = send(&router, raw).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    schemas.check("error", &r.json());

    let id = create(&router, json!({"audiogram": MILD})).await;
    let r = post(&router, &format!("/v1/sessions/{id}/scene"), &json!({"posteriors": [0.5, 0.5, 0.5]})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["code"], "invalid_scene");
    let off = create(&router, json!({"audiogram": MILD, "parser_enabled": false})).await;
    let r = post(&router, &format!("/v1/sessions/{off}/scene"), &json!({"posteriors": [0.2, 0.3, 0.5]})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "parser_disabled");
}

#[tokio::test]
async fn silence_classifies_as_quiet() {
    let schemas = Schemas::load();
    let (router, _) = app();
    let wav = base64::engine::general_purpose::STANDARD.encode(silence_wav(1.0));
    let r = post(&router, "/v1/classify", &json!({"wav": wav})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    schemas.check("classify_response", &r.json());
    assert_eq!(r.json()["class"], "quiet");
    let sum: f64 = r.json()["posteriors"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);

    // a frame matrix at the log floor is the same silence, already embedded
    let floor = 1e-10f64.ln();
    let r = post(&router, "/v1/classify", &json!({"frames": vec![vec![floor; 64]; 3]})).await;
    assert_eq!(r.json()["class"], "quiet");
}

#[tokio::test]
async fn healthz_and_cors() {
    let schemas = Schemas::load();
    let (router, _) = app_with(ServiceConfig { cors_allow: vec!["http://localhost:5173".into()], ..Default::default() });
    let r = get(&router, "/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    schemas.check("healthz_response", &r.json());
    assert_eq!(r.json()["book_templates"], 6);
    assert_eq!(r.json()["model_loaded"], true);

    let req = Request::get("/healthz").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let r = send(&router, req).await;
    assert_eq!(r.headers.get("access-control-allow-origin").unwrap(), "http://localhost:5173");
    let req = Request::get("/healthz").header("origin", "http://evil.example").body(Body::empty()).unwrap();
    assert!(send(&router, req).await.headers.get("access-control-allow-origin").is_none());
}

#[tokio::test]
async fn transcript_is_written_ahead_per_turn() {
    let dir = tempfile::tempdir().unwrap();
    let (router, app) = app_with(ServiceConfig { transcript_dir: Some(dir.path().to_path_buf()), ..Default::default() });
    let id = create(&router, json!({"audiogram": MILD, "scene": {"posteriors": [0.1, 0.1, 0.8]}})).await;
    let path = dir.path().join(format!("{id}.jsonl"));
    let lines = || std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines(), 2, "header and first scene");
    let url = format!("/v1/sessions/{id}/message");
    post(&router, &url, &json!({"text": "there is a whistle when I chew"})).await;
    // subproblem, complaint, question
    assert_eq!(lines(), 5);
    let q = post(&router, &url, &json!({"text": "something nobody expects"})).await;
    assert_eq!(q.json()["agent_turn"]["kind"], "ask_slot");
    assert_eq!(lines(), 7);

    // a failed step leaves the file untouched
    let s = post(&router, &format!("/v1/sessions/{id}/scene"), &json!({"posteriors": [1.0, 1.0, 1.0]})).await;
    assert_eq!(s.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(lines(), 7);

    let lease = app.store.read(&id).await.unwrap();
    let written = std::fs::read_to_string(&path).unwrap();
    let logged: String = lease.state().log.iter().map(|e| e.to_line()).collect();
    assert_eq!(written, logged);
}

#[tokio::test]
async fn same_session_requests_are_single_flight() {
    let (router, app) = app();
    let id = create(&router, json!({"audiogram": MILD, "parser_enabled": false})).await;
    let held = app.store.lease(&id).unwrap();
    let r = post(&router, &format!("/v1/sessions/{id}/message"), &json!({"text": "it whistles"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "session_busy");
    drop(held);
    let r = post(&router, &format!("/v1/sessions/{id}/message"), &json!({"text": "it whistles"})).await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn distinct_sessions_do_not_interleave() {
    let (router, _) = app();
    let book = StrategyBook::default_book();
    let scenarios = generate_scenarios(12, 5, &book, &GeneratorConfig::default());
    let mut handles = Vec::new();
    for sc in scenarios {
        let router = router.clone();
        handles.push(tokio::spawn(async move {
            let id = create(&router, json!({"audiogram": sc.audiogram, "parser_enabled": false})).await;
            let url = format!("/v1/sessions/{id}/message");
            let mut r = post(&router, &url, &json!({"text": sc.complaint})).await;
            while r.json()["agent_turn"]["kind"] == "ask_slot" {
                let slot = r.json()["agent_turn"]["slot"].as_str().unwrap().to_string();
                r = post(&router, &url, &json!({"text": sc.hidden_answers[&slot]})).await;
            }
            let t = SessionTranscript::from_jsonl(&get(&router, &format!("/v1/sessions/{id}/transcript")).await.text()).unwrap();
            (id, sc.subproblem, t)
        }));
    }
    for h in handles {
        let (id, sub, t) = h.await.unwrap();
        assert_eq!(t.session_id, id);
        assert_eq!(t.subproblem, Some(sub));
        assert_eq!(t.answer_turns(), 10);
        assert_eq!(t.recommendation.unwrap().provenance.session_id, id);
    }
}

/// Reads SSE frames until one carries `event: {name}`; returns its data.
async fn next_event(body: &mut Body, name: &str) -> Value {
    let mut buf = String::new();
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame()).await.expect("event in time").unwrap().unwrap();
        if let Ok(data) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut event = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(e) = line.strip_prefix("event: ") {
                    event = Some(e.to_string());
                } else if let Some(d) = line.strip_prefix("data: ") {
                    data.push_str(d);
                }
            }
            if event.as_deref() == Some(name) {
                return serde_json::from_str(&data).unwrap();
            }
        }
    }
}

#[tokio::test]
async fn event_stream_pushes_scene_turn_and_done() {
    let schemas = Schemas::load();
    let (router, _) = app();
    let book = StrategyBook::default_book();
    let sc = generate_scenarios(1, 4, &book, &GeneratorConfig::default()).remove(0);
    let id = create(&router, json!({"audiogram": sc.audiogram})).await;
    let resp = router
        .clone()
        .oneshot(Request::get(format!("/v1/sessions/{id}/events")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut body = resp.into_body();

    post(&router, &format!("/v1/sessions/{id}/scene"), &json!({"posteriors": sc.scene.posteriors()})).await;
    schemas.check("scene_response", &next_event(&mut body, "scene_update").await);

    let url = format!("/v1/sessions/{id}/message");
    let mut r = post(&router, &url, &json!({"text": sc.complaint})).await;
    let ev = next_event(&mut body, "agent_turn").await;
    schemas.check("message_response", &ev);
    assert_eq!(ev, r.json());
    while r.json()["agent_turn"]["kind"] == "ask_slot" {
        let slot = r.json()["agent_turn"]["slot"].as_str().unwrap().to_string();
        r = post(&router, &url, &json!({"text": sc.hidden_answers[&slot]})).await;
    }
    let done = next_event(&mut body, "session_done").await;
    schemas.check("session_done_event", &done);
    assert_eq!(done["outcome"], "completed");
}
