#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cafa_service::{router, AppState, ServiceConfig, Shared};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

const SCHEMA_BASE: &str = "https://cafa.invalid/schemas/";

pub fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

/// Validators for every published schema, with cross-file `$ref`s resolved.
pub struct Schemas {
    validators: std::collections::HashMap<String, jsonschema::Validator>,
}

impl Schemas {
    pub fn load() -> Self {
        let mut docs = Vec::new();
        for entry in std::fs::read_dir(schema_dir()).expect("schema dir") {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).expect("schema is JSON");
            assert_eq!(doc["$id"], format!("{SCHEMA_BASE}{name}"), "schema $id matches file name");
            docs.push((name, doc));
        }
        let mut validators = std::collections::HashMap::new();
        for (name, doc) in &docs {
            let mut opts = jsonschema::options();
            for (other, odoc) in &docs {
                opts = opts.with_resource(
                    format!("{SCHEMA_BASE}{other}"),
                    jsonschema::Resource::from_contents(odoc.clone()).unwrap(),
                );
            }
            let v = opts.build(doc).unwrap_or_else(|e| panic!("schema {name} does not compile: {e}"));
            validators.insert(name.trim_end_matches(".json").to_string(), v);
        }
        Self { validators }
    }

    pub fn errors(&self, schema: &str, value: &Value) -> Vec<String> {
        let v = self.validators.get(schema).unwrap_or_else(|| panic!("no schema {schema}"));
        v.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect()
    }

    pub fn check(&self, schema: &str, value: &Value) {
        let errs = self.errors(schema, value);
        assert!(errs.is_empty(), "{schema} rejects {value}: {errs:?}");
    }
}

pub fn app_with(config: ServiceConfig) -> (Router, Shared) {
    let loaded = config.load_all().expect("config loads");
    let cors = config.cors_allow.clone();
    let app: Shared = Arc::new(AppState::new(loaded, &config));
    (router(app.clone(), &cors), app)
}

pub fn app() -> (Router, Shared) {
    app_with(ServiceConfig::default())
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("body is not JSON ({e}): {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub async fn send(router: &Router, req: Request<Body>) -> Reply {
    let resp = router.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let headers = resp.headers().clone();
    let content_type = headers.get("content-type").map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, headers, body }
}

pub async fn post(router: &Router, uri: &str, body: &Value) -> Reply {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    send(router, req).await
}

pub async fn get(router: &Router, uri: &str) -> Reply {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

/// 44.1 kHz mono 16-bit WAV of digital silence.
pub fn silence_wav(seconds: f64) -> Vec<u8> {
    let n = (44_100.0 * seconds) as usize;
    let clip = cafa_core::audio::AudioClip::mono(vec![0.0; n], 44_100);
    cafa_core::audio::write_wav_16bit(&clip).unwrap()
}

pub const MILD: [f64; 8] = [30.0, 30.0, 35.0, 35.0, 40.0, 45.0, 50.0, 50.0];
