use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mirror_core::config::{DatasetConfig, EnrichmentMode};
use mirror_core::ingestion::{detect_platform, parse_auto, ExportFile, ParseOptions, SkipReason};
use mirror_core::model::Platform;
use mirror_core::pipeline::{self, Services};
use mirror_core::store::{Stage, Store};
use serde::Deserialize;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Deserialize)]
struct Expected {
    pii_sentinels: Vec<String>,
    files: BTreeMap<String, FileExpectation>,
    unrecognized: Vec<String>,
    total_events: usize,
}

#[derive(Deserialize)]
struct FileExpectation {
    platform: Platform,
    events: usize,
    skipped: BTreeMap<SkipReason, usize>,
    events_without_ads: usize,
}

fn expected() -> Expected {
    serde_json::from_slice(&std::fs::read(fixtures().join("expected.json")).unwrap()).unwrap()
}

fn export(rel: &str) -> ExportFile {
    let path = fixtures().join("exports").join(rel);
    let name = path.file_name().unwrap().to_string_lossy().into_owned();
    ExportFile::new(name, std::fs::read(path).unwrap())
}

fn all_exports() -> Vec<ExportFile> {
    let exp = expected();
    exp.files.keys().chain(&exp.unrecognized).map(|k| export(k)).collect()
}

#[test]
fn each_file_parses_to_expected_counts() {
    for (rel, want) in expected().files {
        let (events, report) = parse_auto(vec![export(&rel)], &ParseOptions::default()).unwrap();
        assert_eq!(events.len(), want.events, "{rel}");
        assert_eq!(report.events_parsed, want.events, "{rel}");
        assert_eq!(report.skip_reasons, want.skipped, "{rel}");
        assert!(report.is_consistent(), "{rel}");
        assert!(events.iter().all(|e| e.platform == want.platform), "{rel}");

        let no_ads = ParseOptions { include_ads: false, ..ParseOptions::default() };
        let (events, report) = parse_auto(vec![export(&rel)], &no_ads).unwrap();
        assert_eq!(events.len(), want.events_without_ads, "{rel}");
        assert_eq!(report.skipped_for(SkipReason::AdRecord), want.events - want.events_without_ads, "{rel}");
        assert!(report.is_consistent(), "{rel}");
    }
}

#[test]
fn unrecognized_files_are_not_detected() {
    for rel in expected().unrecognized {
        assert!(detect_platform(&[export(&rel)]).is_err(), "{rel}");
    }
}

#[test]
fn mixed_upload_merges_all_platforms() {
    let exp = expected();
    let (events, reports) = pipeline::parse_uploads(all_exports(), &ParseOptions::default()).unwrap();
    assert_eq!(events.len(), exp.total_events);
    assert_eq!(reports.len(), 3);
    assert!(events.windows(2).all(|w| w[0].order_key() <= w[1].order_key()));
    for (platform, report) in &reports {
        let want: usize = exp.files.values().filter(|f| f.platform == *platform).map(|f| f.events).sum();
        assert_eq!(report.events_parsed, want, "{platform}");
    }
}

fn fixture_config() -> DatasetConfig {
    let mut cfg = DatasetConfig::default();
    cfg.enrichment.mode = EnrichmentMode::Fixture;
    cfg.enrichment.fixture_dir = Some(fixtures().join("enrichment"));
    cfg
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files_under(&path, out);
        } else {
            out.push(path);
        }
    }
}

#[test]
fn pipeline_output_contains_no_pii_sentinels() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::open(tmp.path()).unwrap();
    let cfg = fixture_config();
    let svc = Services::from_config(&cfg, &Default::default(), std::sync::Arc::new(mirror_core::http::FixtureHttp::new())).unwrap();
    let id = pipeline::create_from_uploads(&store, &cfg, &all_exports()).unwrap();
    let manifest = pipeline::run(&store, &id, &svc, &|_| {}).unwrap();
    assert_eq!(manifest.stage, Stage::Ready);
    assert!(store.raw_files(&id).unwrap().is_empty());

    let mut files = Vec::new();
    files_under(tmp.path(), &mut files);
    assert!(!files.is_empty());
    let sentinels = expected().pii_sentinels;
    for path in files {
        let text = String::from_utf8_lossy(&std::fs::read(&path).unwrap()).into_owned();
        for s in &sentinels {
            assert!(!text.contains(s.as_str()), "{s} found in {}", path.display());
        }
    }

    let ready = pipeline::load_ready(&store, &id).unwrap();
    assert_eq!(ready.items.len(), expected().total_events);
    assert_eq!(ready.map.points.len(), expected().total_events);
    assert!(ready.topics.is_consistent());
}
