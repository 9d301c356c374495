mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use common::*;
use mirror_core::model::{EventId, Platform, TopicId};
use mirror_core::pipeline::{self, EVENTS};
use mirror_core::store::Stage;
use mirror_server::jobs::JobState;
use serde_json::{json, Value};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn netflix_upload_runs_to_done_and_serves_every_endpoint() {
    let app = TestApp::new(test_config());
    let (status, accepted) = app.upload(&[export("netflix/NetflixViewingHistory.csv")]).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_schema("accepted", &accepted);

    let jobs = app.wait_job(accepted["job_id"].as_str().unwrap()).await;
    for j in &jobs {
        assert_schema("job", &serde_json::to_value(j).unwrap());
    }
    assert!(jobs.windows(2).all(|w| w[0].progress.completed <= w[1].progress.completed));
    assert_eq!(jobs.last().unwrap().state, JobState::Done);
    assert_eq!(jobs.last().unwrap().progress.completed, jobs.last().unwrap().progress.total);

    let id = accepted["dataset_id"].as_str().unwrap();
    let (status, ds) = app.get_json(&format!("/datasets/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("dataset_status", &ds);
    assert_eq!(ds["stage"], "ready");
    assert_eq!(ds["raw_purged"], true);
    let (_, list) = app.get_json("/datasets").await;
    assert_schema("dataset_list", &list);

    let (status, map) = app.get_json(&format!("/datasets/{id}/map")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("map", &map);
    assert_eq!(map["points"].as_array().unwrap().len(), 7);

    let (status, tl) = app.get_json(&format!("/datasets/{id}/timeline?from=2023-07-01T00:00:00Z&to=2023-09-30T00:00:00Z&frames=12")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("timeline", &tl);
    assert_eq!(tl["timeline"]["total"], 7);
    assert_eq!(tl["window"]["count"], 5);
    assert_eq!(tl["frames"].as_array().unwrap().len(), 12);

    let (status, topics) = app.get_json(&format!("/datasets/{id}/topics")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("topics", &topics);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mixed_upload_map_filters_and_topic_items() {
    let app = TestApp::new(test_config());
    let id = app.ready_dataset(&all_exports()).await;
    let ready = pipeline::load_ready(app.state.store(), &id).unwrap();
    let n = ready.map.points.len();
    assert_eq!(n, 30);

    let (_, full) = app.get_json(&format!("/datasets/{id}/map?zoom=5")).await;
    let pts = full["points"].as_array().unwrap();
    assert_eq!(pts.len(), n);
    assert!(pts.iter().all(|p| p["lod"] == "thumbnail" && p["title"].is_string()));
    assert_eq!(full["thinned"], false);
    assert!(full["contours"].as_array().unwrap().is_empty());
    let yt_thumbs = pts.iter().filter(|p| p["platform"] == "youtube" && p["thumbnail_url"].is_string()).count();
    assert!(yt_thumbs > 0);

    let (_, dots) = app.get_json(&format!("/datasets/{id}/map?zoom=0")).await;
    assert!(dots["points"].as_array().unwrap().iter().all(|p| p["lod"] == "dot" && p.get("title").is_none()));

    let (_, nf) = app.get_json(&format!("/datasets/{id}/map?platforms=netflix")).await;
    let nf_pts = nf["points"].as_array().unwrap();
    assert_eq!(nf_pts.len(), 9);
    assert!(nf_pts.iter().all(|p| p["platform"] == "netflix"));

    let t = ready.timeline.min().unwrap() + (ready.timeline.max().unwrap() - ready.timeline.min().unwrap()) / 2;
    let until = t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let (_, sliced) = app.get_json(&format!("/datasets/{id}/map?until={until}")).await;
    let got: BTreeSet<String> = sliced["points"].as_array().unwrap().iter().map(|p| p["item_id"].as_str().unwrap().to_string()).collect();
    let want: BTreeSet<String> = ready.timeline.ids_until(t).iter().map(|e| e.as_str().to_string()).collect();
    assert_eq!(got, want);
    assert!(!got.is_empty() && got.len() < n);

    let (_, thin) = app.get_json(&format!("/datasets/{id}/map?max_points=5")).await;
    assert_schema("map", &thin);
    assert_eq!(thin["thinned"], true);
    assert_eq!(thin["total"], n);
    assert_eq!(thin["points"].as_array().unwrap().len(), 5);
    assert!(!thin["contours"].as_array().unwrap().is_empty());

    let (_, b) = app.get_json(&format!("/datasets/{id}/map?bbox=-1000,-1000,-999,-999")).await;
    assert!(b["points"].as_array().unwrap().is_empty() && b["labels"].as_array().unwrap().is_empty());

    for node in ready.topics.nodes() {
        let tid = node.label.topic_id.0;
        let (status, items) = app.get_json(&format!("/datasets/{id}/topics/{tid}/items")).await;
        assert_eq!(status, StatusCode::OK);
        assert_schema("topic_items", &items);
        let got: BTreeSet<&str> = items["items"].as_array().unwrap().iter().map(|i| i["item_id"].as_str().unwrap()).collect();
        let want: BTreeSet<&str> = node.members.iter().map(EventId::as_str).collect();
        assert_eq!(got, want);
    }
    let missing = ready.topics.nodes().map(|n| n.label.topic_id.0).max().map_or(0, |m| m + 1);
    assert_eq!(app.get(&format!("/datasets/{id}/topics/{missing}/items")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn identical_queries_are_byte_identical() {
    let app = TestApp::new(test_config());
    let id = app.ready_dataset(&all_exports()).await;
    for q in ["map?zoom=3", "map?max_points=4&platforms=youtube,tiktok", "timeline?frames=12", "topics"] {
        let uri = format!("/datasets/{id}/{q}");
        let (s1, a) = app.get(&uri).await;
        let (s2, b) = app.get(&uri).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(a, b, "{q}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn upload_errors() {
    let app = TestApp::new(test_config());
    let (status, body) = app.upload(&[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_schema("error", &body);
    let (status, _) = app.upload(&[("notes.txt".into(), b"just some text".to_vec())]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(app.state.store().list().unwrap().is_empty());

    let mut cfg = test_config();
    cfg.dataset.ingest.max_upload_bytes = 100;
    let small = TestApp::new(cfg);
    let (status, body) = small.upload(&[export("netflix/NetflixViewingHistory.csv")]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_schema("error", &body);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn query_errors() {
    let app = TestApp::new(test_config());
    assert_eq!(app.get("/datasets/nope/map").await.0, StatusCode::NOT_FOUND);
    assert_eq!(app.get("/jobs/nope").await.0, StatusCode::NOT_FOUND);

    let cfg = test_config();
    let files = vec![mirror_core::ingestion::ExportFile::new("a.csv", export("netflix/NetflixViewingHistory.csv").1)];
    let pending = pipeline::create_from_uploads(app.state.store(), &cfg.dataset, &files).unwrap();
    let (status, body) = app.get_json(&format!("/datasets/{pending}/map")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_schema("error", &body);
    assert_eq!(body["error"]["stage"], "uploaded");
    let (status, _) = app.post_json(&format!("/datasets/{pending}/layouts"), &json!({"kind": "grid"})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let id = app.ready_dataset(&[export("netflix/NetflixViewingHistory.csv")]).await;
    for q in ["zoom=6", "bbox=1,1,0,0", "platforms=vimeo", "until=yesterday", "max_points=0", "zoom=-1"] {
        let (status, _) = app.get(&format!("/datasets/{id}/map?{q}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{q}");
    }
    assert_eq!(app.get(&format!("/datasets/{id}/timeline?frames=0")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        app.get(&format!("/datasets/{id}/timeline?from=2024-01-01T00:00:00Z&to=2023-01-01T00:00:00Z")).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(app.get(&format!("/datasets/{id}/layouts/unknown")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn layout_jobs() {
    let app = TestApp::new(test_config());
    let id = app.ready_dataset(&all_exports()).await;
    let uri = format!("/datasets/{id}/layouts");

    let (status, body) = app.post_json(&uri, &json!({"kind": "semantic_axes", "x": {"concept": "  "}, "y": "time"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_schema("error", &body);
    let (status, _) = app.post_json(&uri, &json!({"kind": "spiral"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, accepted) =
        app.post_json(&uri, &json!({"kind": "semantic_axes", "x": {"concept": "gaming"}, "y": {"concept": "music"}})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_schema("accepted", &accepted);
    let job = app.wait_job(accepted["job_id"].as_str().unwrap()).await.pop().unwrap();
    assert_eq!(job.state, JobState::Done, "{:?}", job.error);
    let layout_id = job.layout_id.unwrap();

    let (status, layout) = app.get_json(&format!("/datasets/{id}/layouts/{layout_id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("layout", &layout);
    assert_eq!(layout["axis_concepts"], json!(["gaming", "music"]));

    let (status, view) = app.get_json(&format!("/datasets/{id}/map?layout={layout_id}&zoom=5")).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("map", &view);
    assert_eq!(view["kind"], "semantic_axes");
    assert_eq!(view["points"].as_array().unwrap().len(), 30);

    let (_, main_before) = app.get(&format!("/datasets/{id}/map?zoom=5")).await;
    let (_, accepted) = app.post_json(&uri, &json!({"kind": "grid"})).await;
    let job = app.wait_job(accepted["job_id"].as_str().unwrap()).await.pop().unwrap();
    assert_eq!(job.state, JobState::Done);
    let (status, grid) = app.get_json(&format!("/datasets/{id}/layouts/{}", job.layout_id.unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("layout", &grid);
    let (_, main_after) = app.get(&format!("/datasets/{id}/map?zoom=5")).await;
    assert_eq!(main_before, main_after);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn delete_removes_dataset() {
    let app = TestApp::new(test_config());
    let id = app.ready_dataset(&[export("netflix/NetflixViewingHistory.csv")]).await;
    assert_eq!(app.get(&format!("/datasets/{id}/map")).await.0, StatusCode::OK);
    assert_eq!(app.delete(&format!("/datasets/{id}")).await, StatusCode::NO_CONTENT);
    assert_eq!(app.get(&format!("/datasets/{id}/map")).await.0, StatusCode::NOT_FOUND);
    assert!(!app.dir.path().join(&id).exists());
    assert_eq!(app.delete(&format!("/datasets/{id}")).await, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reupload_gives_same_events() {
    let app = TestApp::new(test_config());
    let a = app.ready_dataset(&[export("tiktok/user_data.json")]).await;
    let b = app.ready_dataset(&[export("tiktok/user_data.json")]).await;
    assert_ne!(a, b);
    let store = app.state.store();
    assert_eq!(store.get_stage(&a, Stage::Parsed, EVENTS).unwrap(), store.get_stage(&b, Stage::Parsed, EVENTS).unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn webhook_receives_finished_job() {
    let mut cfg = test_config();
    cfg.server.webhook_url = Some("http://hooks.test/mirror".into());
    let app = TestApp::new(cfg);
    app.ready_dataset(&[export("netflix/NetflixViewingHistory.csv")]).await;
    for _ in 0..500 {
        if app.http.requested_urls().iter().any(|u| u == "http://hooks.test/mirror") {
            return;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("webhook not called");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unfinished_datasets_resume() {
    let app = TestApp::new(test_config());
    let files = vec![mirror_core::ingestion::ExportFile::new("h.csv", export("netflix/NetflixViewingHistory.csv").1)];
    let id = pipeline::create_from_uploads(app.state.store(), &test_config().dataset, &files).unwrap();
    let jobs = app.state.resume_unfinished().unwrap();
    assert_eq!(jobs.len(), 1);
    assert_eq!(jobs[0].dataset_id, id);
    let last = app.wait_job(&jobs[0].job_id).await.pop().unwrap();
    assert_eq!(last.state, JobState::Done);
    assert!(app.state.resume_unfinished().unwrap().is_empty());
}

#[derive(Clone, Default)]
struct Captured(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for Captured {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn request_log_has_no_content_fields() {
    let app = TestApp::new(test_config());
    let id = app.ready_dataset(&[export("netflix/NetflixViewingHistory.csv")]).await;
    let logs = Captured::default();
    let writer = logs.clone();
    let subscriber = tracing_subscriber::fmt().with_writer(move || writer.clone()).with_ansi(false).finish();
    let _guard = tracing::subscriber::set_default(subscriber);
    app.get(&format!("/datasets/{id}/map?until=2023-08-01T00:00:00Z&platforms=netflix")).await;
    app.post_json(&format!("/datasets/{id}/layouts"), &json!({"kind": "semantic_axes", "x": {"concept": "secret interest"}, "y": "time"}))
        .await;
    let text = String::from_utf8(logs.0.lock().unwrap().clone()).unwrap();
    assert!(text.contains("/datasets/{id}/map"), "{text}");
    for forbidden in [id.as_str(), "2023-08-01", "secret interest", "Alice"] {
        assert!(!text.contains(forbidden), "log leaks `{forbidden}`: {text}");
    }
}

#[test]
fn platforms_and_topic_ids_serialize_as_documented() {
    assert_eq!(serde_json::to_value(Platform::Tiktok).unwrap(), json!("tiktok"));
    assert_eq!(serde_json::to_value(TopicId(3)).unwrap(), json!(3));
    let v: Value = serde_json::to_value(Stage::LaidOut).unwrap();
    assert_eq!(v, json!("laid_out"));
}
