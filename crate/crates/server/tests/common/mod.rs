#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mirror_core::config::{EnrichmentMode, MirrorConfig};
use mirror_core::http::{FixtureHttp, HttpClient};
use mirror_core::pipeline::Services;
use mirror_core::store::Store;
use mirror_server::jobs::{Job, JobState};
use mirror_server::{router, AppState};
use serde_json::Value;
use tower::ServiceExt;

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn export(rel: &str) -> (String, Vec<u8>) {
    let path = core_fixtures().join("exports").join(rel);
    (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(path).unwrap())
}

pub fn all_exports() -> Vec<(String, Vec<u8>)> {
    [
        "youtube/watch-history.json",
        "youtube/watch-history.html",
        "netflix/NetflixViewingHistory.csv",
        "netflix/ViewingActivity.csv",
        "netflix/IpAddressesLogin.csv",
        "tiktok/user_data.json",
    ]
    .into_iter()
    .map(export)
    .collect()
}

/// Small, fast dataset settings with fixture enrichment.
pub fn test_config() -> MirrorConfig {
    let mut cfg = MirrorConfig::default();
    cfg.dataset.embed.dimension = 32;
    cfg.dataset.layout.n_epochs = Some(100);
    cfg.dataset.enrichment.mode = EnrichmentMode::Fixture;
    cfg.dataset.enrichment.fixture_dir = Some(core_fixtures().join("enrichment"));
    cfg.dataset.topics.min_cluster_size = 3;
    cfg
}

pub struct TestApp {
    pub router: Router,
    pub state: AppState,
    pub http: Arc<FixtureHttp>,
    pub dir: tempfile::TempDir,
}

impl TestApp {
    pub fn new(cfg: MirrorConfig) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let http = Arc::new(FixtureHttp::new());
        let svc_http: Arc<dyn HttpClient> = http.clone();
        let factory: mirror_server::ServicesFactory =
            Arc::new(move |c| Services::from_config(c, &Default::default(), svc_http.clone()));
        let state = AppState::new(store, cfg, factory, Some(http.clone() as Arc<dyn HttpClient>));
        TestApp { router: router(state.clone()), state, http, dir }
    }

    pub async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Vec<u8>) {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    pub async fn get_json(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b) = self.get(uri).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn post_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
        let (s, b) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn delete(&self, uri: &str) -> StatusCode {
        self.send(Request::builder().method(Method::DELETE).uri(uri).body(Body::empty()).unwrap()).await.0
    }

    pub async fn upload(&self, files: &[(String, Vec<u8>)]) -> (StatusCode, Value) {
        let (s, b) = self.send(multipart_request("/datasets", files)).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    /// Polls a job until it finishes, returning every state seen.
    pub async fn wait_job(&self, job_id: &str) -> Vec<Job> {
        let mut seen = Vec::new();
        for _ in 0..6000 {
            let (status, body) = self.get(&format!("/jobs/{job_id}")).await;
            assert_eq!(status, StatusCode::OK);
            let job: Job = serde_json::from_slice(&body).unwrap();
            let terminal = matches!(job.state, JobState::Done | JobState::Failed);
            seen.push(job);
            if terminal {
                return seen;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("job {job_id} did not finish");
    }

    /// Uploads files and waits for the dataset to be ready.
    pub async fn ready_dataset(&self, files: &[(String, Vec<u8>)]) -> String {
        let (status, body) = self.upload(files).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        let jobs = self.wait_job(body["job_id"].as_str().unwrap()).await;
        let last = jobs.last().unwrap();
        assert_eq!(last.state, JobState::Done, "{:?}", last.error);
        body["dataset_id"].as_str().unwrap().to_string()
    }
}

pub fn multipart_request(uri: &str, files: &[(String, Vec<u8>)]) -> Request<Body> {
    let boundary = "mirror-test-boundary-7f3a";
    let mut body = Vec::new();
    for (name, bytes) in files {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"files\"; filename=\"{name}\"\r\n").as_bytes(),
        );
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

/// Validates `value` against one definition of the frozen API schema.
pub fn assert_schema(def: &str, value: &Value) {
    let doc: Value =
        serde_json::from_slice(&std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("api/schema.json")).unwrap())
            .unwrap();
    let mut errors = Vec::new();
    check(&doc, &doc["$defs"][def], value, "", &mut errors);
    assert!(errors.is_empty(), "{def} schema violations: {errors:#?}");
}

/// Checks the keyword subset the API schema uses.
fn check(doc: &Value, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(s) = schema.as_object() else { return };
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").expect("local ref");
        check(doc, &doc["$defs"][name], v, at, errors);
    }
    if let Some(t) = s.get("type") {
        let types: Vec<&str> = match t {
            Value::String(one) => vec![one.as_str()],
            Value::Array(many) => many.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword at {at}"),
        };
        if !types.iter().any(|t| type_matches(t, v)) {
            errors.push(format!("{at}: expected {types:?}, got {v}"));
            return;
        }
    }
    if let Some(options) = s.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            errors.push(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(options) = s.get("oneOf").and_then(Value::as_array) {
        let passing = options
            .iter()
            .filter(|o| {
                let mut e = Vec::new();
                check(doc, o, v, at, &mut e);
                e.is_empty()
            })
            .count();
        if passing != 1 {
            errors.push(format!("{at}: {passing} oneOf branches match"));
        }
    }
    if s.get("format").and_then(Value::as_str) == Some("date-time") {
        if let Some(text) = v.as_str() {
            if chrono::DateTime::parse_from_rfc3339(text).is_err() {
                errors.push(format!("{at}: `{text}` is not a date-time"));
            }
        }
    }
    if let Some(n) = v.as_f64() {
        if let Some(min) = s.get("minimum").and_then(Value::as_f64) {
            if n < min {
                errors.push(format!("{at}: {n} < {min}"));
            }
        }
        if let Some(min) = s.get("exclusiveMinimum").and_then(Value::as_f64) {
            if n <= min {
                errors.push(format!("{at}: {n} <= {min}"));
            }
        }
    }
    if let (Some(text), Some(min)) = (v.as_str(), s.get("minLength").and_then(Value::as_u64)) {
        if (text.chars().count() as u64) < min {
            errors.push(format!("{at}: shorter than {min}"));
        }
    }
    if let Some(items) = v.as_array() {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errors.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(max) = s.get("maxItems").and_then(Value::as_u64) {
            if items.len() as u64 > max {
                errors.push(format!("{at}: more than {max} items"));
            }
        }
        if let Some(item) = s.get("items") {
            for (i, x) in items.iter().enumerate() {
                check(doc, item, x, &format!("{at}/{i}"), errors);
            }
        }
    }
    if let Some(obj) = v.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        if let Some(required) = s.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    errors.push(format!("{at}: missing `{key}`"));
                }
            }
        }
        for (key, x) in obj {
            let path = format!("{at}/{key}");
            if let Some(names) = s.get("propertyNames") {
                check(doc, names, &Value::String(key.clone()), &path, errors);
            }
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(doc, sub, x, &path, errors),
                None => match s.get("additionalProperties") {
                    Some(Value::Bool(false)) => errors.push(format!("{path}: unexpected property")),
                    Some(extra @ Value::Object(_)) => check(doc, extra, x, &path, errors),
                    _ => {}
                },
            }
        }
    }
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        other => panic!("unsupported type `{other}`"),
    }
}

#[test]
fn schema_checker_rejects_violations() {
    assert_schema("platform", &serde_json::json!("youtube"));
    let bad = [
        ("platform", serde_json::json!("vimeo")),
        ("timestamp", serde_json::json!("yesterday")),
        ("error", serde_json::json!({"error": {"code": "x", "message": "y", "extra": 1}})),
        ("error", serde_json::json!({"error": {"code": "x"}})),
    ];
    for (def, v) in bad {
        assert!(std::panic::catch_unwind(|| assert_schema(def, &v)).is_err(), "{def} accepted {v}");
    }
}
