//! Golden protocol scenarios.
//!
//! Each file under `fixtures/protocol` is a list of HTTP steps replayed
//! against a fresh service. Expected bodies are compared after
//! canonicalization (sorted keys, compact). A step with `"bind": "a"`
//! captures the returned `session_id`; later steps refer to it as `{a}` in
//! paths and `"<a>"` in bodies. Run with `PEDAREC_BLESS=1` to rewrite the
//! expectations from the live responses.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use pedarec_service::{router, AppState, ServiceConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Setup {
    #[serde(default = "yes")]
    pub seeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admin_token: Option<String>,
}

fn yes() -> bool {
    true
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            seeded: true,
            admin_token: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub method: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    /// Sent verbatim instead of `body`, for malformed input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
    pub status: u16,
    pub response: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub setup: Setup,
    pub steps: Vec<Step>,
}

pub fn config(setup: &Setup, dir: &Path) -> ServiceConfig {
    let fx = fixtures();
    let mut config = ServiceConfig {
        snapshot_path: Some(dir.join("bank.json")),
        admin_token: setup.admin_token.clone(),
        ..ServiceConfig::default()
    };
    if setup.seeded {
        config.schema_path = Some(fx.join("schema.json"));
        config.seed_path = Some(fx.join("corpus.json"));
        config.rules_path = Some(fx.join("rules.json"));
    }
    config
}

pub fn app(setup: &Setup) -> (Router, Arc<AppState>, TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let state = pedarec_service::state(&config(setup, dir.path())).unwrap();
    (router(state.clone()), state, dir)
}

/// Compact JSON with object keys in sorted order.
pub fn canonical(v: &Value) -> String {
    // serde_json's default map is a BTreeMap, so a round-trip through
    // Value sorts every object
    let sorted: Value = serde_json::from_str(&v.to_string()).unwrap();
    serde_json::to_string(&sorted).unwrap()
}

fn substitute(v: &Value, bound: &BTreeMap<String, String>) -> Value {
    match v {
        Value::String(s) => {
            let key = s.strip_prefix('<').and_then(|s| s.strip_suffix('>'));
            match key.and_then(|k| bound.get(k)) {
                Some(id) => Value::String(id.clone()),
                None => v.clone(),
            }
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| substitute(x, bound)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), substitute(x, bound))).collect()),
        _ => v.clone(),
    }
}

fn unsubstitute(v: &Value, bound: &BTreeMap<String, String>) -> Value {
    match v {
        Value::String(s) => match bound.iter().find(|(_, id)| *id == s) {
            Some((k, _)) => Value::String(format!("<{k}>")),
            None => v.clone(),
        },
        Value::Array(a) => Value::Array(a.iter().map(|x| unsubstitute(x, bound)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), unsubstitute(x, bound))).collect()),
        _ => v.clone(),
    }
}

pub async fn send(
    app: &Router,
    method: &str,
    path: &str,
    headers: &BTreeMap<String, String>,
    body: Vec<u8>,
) -> (u16, Value) {
    let mut req = Request::builder().method(method).uri(path);
    for (k, v) in headers {
        req = req.header(k.as_str(), v.as_str());
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub const REQUIRED_ROUTES: [&str; 7] = [
    "POST /v1/sessions",
    "POST /v1/sessions/{id}/answers",
    "POST /v1/sessions/{id}/next",
    "POST /v1/sessions/{id}/ratings",
    "POST /v1/sessions/{id}/suggestions",
    "POST /v1/sessions/{id}/close",
    "GET /v1/health",
];

/// The error codes the seven endpoints can return.
pub const REQUIRED_CODES: [&str; 15] = [
    "ServiceNotSeeded",
    "InvalidMode",
    "MalformedRequest",
    "UnknownSession",
    "WrongQuestion",
    "UnknownFeature",
    "NotInVocabulary",
    "ValueOutOfRange",
    "TypeMismatch",
    "NotReady",
    "NotPresented",
    "ScoreOutOfRange",
    "UnknownRecommendation",
    "EmptySuggestion",
    "NotFound",
];

/// Route shapes and error codes exercised by the golden scenarios.
pub fn coverage() -> (BTreeSet<String>, BTreeSet<String>) {
    let mut routes = BTreeSet::new();
    let mut codes = BTreeSet::new();
    for file in scenario_files() {
        for step in load_scenario(&file).steps {
            let shape: Vec<&str> = step
                .path
                .split('/')
                .map(|seg| {
                    if seg.starts_with('{') || seg == "0000" {
                        "{id}"
                    } else {
                        seg
                    }
                })
                .collect();
            routes.insert(format!("{} {}", step.method, shape.join("/")));
            if let Some(code) = step.response.get("error_code").and_then(Value::as_str) {
                codes.insert(code.to_string());
            }
        }
    }
    (routes, codes)
}

pub fn scenario_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixtures().join("protocol"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

pub fn load_scenario(path: &Path) -> Scenario {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Replays one scenario. Returns the mismatches; empty means it passed.
pub async fn run_scenario(path: &Path) -> Vec<String> {
    let bless = std::env::var_os("PEDAREC_BLESS").is_some();
    let mut scenario = load_scenario(path);
    let (app, _state, _dir) = app(&scenario.setup);
    let mut bound: BTreeMap<String, String> = BTreeMap::new();
    let mut failures = Vec::new();

    for (i, step) in scenario.steps.iter_mut().enumerate() {
        let mut path = step.path.clone();
        for (k, id) in &bound {
            path = path.replace(&format!("{{{k}}}"), id);
        }
        let body = match (&step.raw, &step.body) {
            (Some(raw), _) => raw.clone().into_bytes(),
            (None, Some(b)) => b.to_string().into_bytes(),
            (None, None) => Vec::new(),
        };
        let mut headers = step.headers.clone();
        if step.body.is_some() {
            headers
                .entry("content-type".into())
                .or_insert("application/json".into());
        }
        let (status, actual) = send(&app, &step.method, &path, &headers, body).await;
        if let Some(name) = &step.bind {
            if let Some(id) = actual.get("session_id").and_then(Value::as_str) {
                bound.insert(name.clone(), id.to_string());
            }
        }
        if bless {
            step.status = status;
            step.response = unsubstitute(&actual, &bound);
            continue;
        }
        let expected = canonical(&substitute(&step.response, &bound));
        let got = canonical(&actual);
        if status != step.status || expected != got {
            failures.push(format!(
                "{} step {i} ({} {}): expected {} {expected}, got {status} {got}",
                scenario.name, step.method, step.path, step.status
            ));
        }
    }
    if bless {
        let text = serde_json::to_string_pretty(&scenario).unwrap() + "\n";
        std::fs::write(path, text).unwrap();
    }
    failures
}
