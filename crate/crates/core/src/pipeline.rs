//! Runs a dataset through every stage, persisting each one in the
//! [`Store`](crate::store::Store) so an interrupted run resumes from the last
//! completed stage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{ApiKeys, DatasetConfig, EmbedderKind, EnrichmentMode};
use crate::embed::{
    decode_vectors, embed_dataset, encode_vectors, EmbedError, EmbeddingProvider, LocalEmbedder,
    RemoteEmbedder, VectorSidecar,
};
use crate::enrichment::{
    enrich, EnrichOptions, EnrichmentCache, FixtureProvider, MetadataProvider, ProviderSet, TikTokResolver, TmdbSearch,
    YoutubeTranscripts,
};
use crate::harmonize::{embedding_text, harmonize_all, Harmonizer, ModelHarmonizer};
use crate::http::HttpClient;
use crate::ingestion::{detect_platform, parse_bundle, ExportBundle, ExportFile, IngestError, ParseOptions, ParseReport};
use crate::layout::{grid_layout, semantic_axes_layout, semantic_map, Axis, Layout2D, LayoutError, PointInfo, VectorSet};
use crate::llm::ChatModel;
use crate::model::{EmbeddedItem, EnrichedItem, EventId, HarmonizedItem, Platform, TopicId, WatchEvent};
use crate::store::{Manifest, Stage, Store, StoreError};
use crate::temporal::TimelineIndex;
use crate::topics::{build_topics, ModelLabeler, TopicLabeler, TopicTree};

pub const EVENTS: &str = "events.json";
pub const PARSE_REPORT: &str = "parse_report.json";
pub const ENRICHED: &str = "enriched.json";
pub const ENRICHMENT_REPORT: &str = "enrichment_report.json";
pub const HARMONIZED: &str = "harmonized.json";
pub const VECTORS: &str = "vectors.f32";
pub const VECTORS_META: &str = "vectors.json";
pub const LAYOUT: &str = "layout.json";
pub const LAYOUT_COORDS: &str = "layout.f32";
pub const MAP: &str = "map.json";
pub const TOPICS: &str = "topics.json";
pub const TIMELINE: &str = "timeline.json";
const PARTIAL_VECTORS: &str = "partial-vectors.f32";
const PARTIAL_VECTORS_META: &str = "partial-vectors.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stored artifact is unreadable: {0}")]
    Artifact(String),
    #[error("dataset is at stage `{0}`, not ready")]
    NotReady(Stage),
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Artifact(e.to_string())
    }
}

/// The external collaborators a run uses.
#[derive(Clone)]
pub struct Services {
    pub providers: ProviderSet,
    pub cache: Arc<EnrichmentCache>,
    pub harmonizer: Option<Arc<dyn Harmonizer>>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub labeler: Option<Arc<dyn TopicLabeler>>,
}

impl Services {
    /// Offline services: no metadata lookups, rule summaries, the local
    /// embedder and TF-IDF labels.
    pub fn offline(cfg: &DatasetConfig) -> Self {
        Services {
            providers: ProviderSet::none(),
            cache: Arc::new(EnrichmentCache::in_memory()),
            harmonizer: None,
            embedder: Arc::new(LocalEmbedder::new(cfg.embed.dimension, cfg.embed.seed)),
            labeler: None,
        }
    }

    /// Builds the services a dataset config asks for.
    pub fn from_config(cfg: &DatasetConfig, keys: &ApiKeys, http: Arc<dyn HttpClient>) -> Result<Self, PipelineError> {
        let e = &cfg.enrichment;
        let providers = match e.mode {
            EnrichmentMode::Off => ProviderSet::none(),
            EnrichmentMode::Fixture => match &e.fixture_dir {
                Some(dir) => FixtureProvider::set_from_dir(dir)
                    .map_err(|err| PipelineError::Config(format!("fixture dir {}: {err}", dir.display())))?,
                None => ProviderSet::none(),
            },
            EnrichmentMode::Live => ProviderSet {
                youtube: Some(Arc::new(YoutubeTranscripts::new(
                    http.clone(),
                    e.transcript_url_template.clone(),
                    keys.transcripts.clone(),
                )) as Arc<dyn MetadataProvider>),
                netflix: keys.tmdb.clone().map(|k| {
                    Arc::new(TmdbSearch::new(http.clone(), e.tmdb_url_template.clone(), k)) as Arc<dyn MetadataProvider>
                }),
                tiktok: Some(Arc::new(TikTokResolver::new(http.clone(), e.oembed_url_template.clone()))),
            },
        };
        let cache = match &e.cache_path {
            Some(p) => EnrichmentCache::open(p).map_err(|err| PipelineError::Config(format!("cache {}: {err}", p.display())))?,
            None => EnrichmentCache::in_memory(),
        };
        let harmonizer = cfg.harmonize.provider.endpoint.as_ref().map(|ep| {
            let model = ChatModel::new(http.clone(), ep.clone(), cfg.harmonize.provider.model.clone(), keys.llm.clone());
            Arc::new(ModelHarmonizer::new(model, cfg.harmonize.max_summary_words)) as Arc<dyn Harmonizer>
        });
        let embedder: Arc<dyn EmbeddingProvider> = match cfg.embed.kind {
            EmbedderKind::LocalDeterministic => Arc::new(LocalEmbedder::new(cfg.embed.dimension, cfg.embed.seed)),
            EmbedderKind::Remote => {
                let ep = cfg
                    .embed
                    .endpoint
                    .clone()
                    .ok_or_else(|| PipelineError::Config("remote embedder needs an endpoint".into()))?;
                Arc::new(RemoteEmbedder::new(http.clone(), ep, cfg.embed.model.clone(), keys.embed.clone(), cfg.embed.dimension))
            }
        };
        let labeler = cfg.topics.labeler.endpoint.as_ref().map(|ep| {
            let model = ChatModel::new(http.clone(), ep.clone(), cfg.topics.labeler.model.clone(), keys.llm.clone());
            Arc::new(ModelLabeler::new(model)) as Arc<dyn TopicLabeler>
        });
        Ok(Services { providers, cache: Arc::new(cache), harmonizer, embedder, labeler })
    }
}

/// Splits uploaded files into one bundle per detected platform. Files that
/// match no export format are ignored as long as some file matches.
pub fn bundle_uploads(files: Vec<ExportFile>) -> Result<Vec<ExportBundle>, IngestError> {
    if files.is_empty() {
        return Err(IngestError::EmptyBundle);
    }
    let mut groups: BTreeMap<Platform, Vec<ExportFile>> = BTreeMap::new();
    for f in files {
        if let Ok(p) = detect_platform(std::slice::from_ref(&f)) {
            groups.entry(p).or_default().push(f);
        }
    }
    if groups.is_empty() {
        return Err(IngestError::UnknownExport);
    }
    Ok(groups.into_iter().map(|(p, files)| ExportBundle::new(p, files)).collect())
}

/// Parses every platform's files and merges the events in watch order.
pub fn parse_uploads(
    files: Vec<ExportFile>,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, BTreeMap<Platform, ParseReport>), IngestError> {
    let mut events = Vec::new();
    let mut reports = BTreeMap::new();
    for bundle in bundle_uploads(files)? {
        let (ev, report) = parse_bundle(&bundle, opts)?;
        events.extend(ev);
        reports.insert(bundle.platform, report);
    }
    events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    Ok((events, reports))
}

fn load<T: DeserializeOwned>(store: &Store, id: &str, stage: Stage, name: &str) -> Result<T, PipelineError> {
    Ok(serde_json::from_slice(&store.get_stage(id, stage, name)?)?)
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("artifact serializes")
}

/// Little-endian f32 `(x, y)` pairs.
pub fn encode_coords(layout: &Layout2D) -> Vec<u8> {
    layout.points.iter().flat_map(|p| [p.x as f32, p.y as f32]).flat_map(f32::to_le_bytes).collect()
}

fn load_vectors(store: &Store, id: &str) -> Result<Vec<EmbeddedItem>, PipelineError> {
    let meta: VectorSidecar = load(store, id, Stage::Embedded, VECTORS_META)?;
    let bytes = store.get_stage(id, Stage::Embedded, VECTORS)?;
    decode_vectors(&bytes, &meta).map_err(|e| PipelineError::Artifact(e.to_string()))
}

fn load_partial_vectors(store: &Store, id: &str, embedder_id: &str) -> Vec<EmbeddedItem> {
    let Ok(meta_bytes) = store.get_artifact(id, PARTIAL_VECTORS_META) else { return Vec::new() };
    let Ok(meta) = serde_json::from_slice::<VectorSidecar>(&meta_bytes) else { return Vec::new() };
    if meta.provider != embedder_id {
        return Vec::new();
    }
    store
        .get_artifact(id, PARTIAL_VECTORS)
        .ok()
        .and_then(|b| decode_vectors(&b, &meta).ok())
        .unwrap_or_default()
}

fn run_stage(store: &Store, id: &str, stage: Stage, cfg: &DatasetConfig, svc: &Services) -> Result<(), PipelineError> {
    match stage {
        Stage::Uploaded => unreachable!("datasets start uploaded"),
        Stage::Parsed => {
            let files: Vec<ExportFile> =
                store.raw_files(id)?.into_iter().map(|(name, bytes)| ExportFile::new(name, bytes)).collect();
            let opts = ParseOptions::from_config(&cfg.ingest)?;
            let (events, reports) = parse_uploads(files, &opts)?;
            store.put_stage(id, stage, &[(EVENTS, &json(&events)), (PARSE_REPORT, &json(&reports))])?;
        }
        Stage::Enriched => {
            let events: Vec<WatchEvent> = load(store, id, Stage::Parsed, EVENTS)?;
            let (items, report) =
                enrich(&events, &svc.providers, &svc.cache, &EnrichOptions::from_config(&cfg.enrichment));
            if svc.cache.path().is_some() {
                if let Err(err) = svc.cache.save() {
                    tracing::warn!(%err, "could not persist enrichment cache");
                }
            }
            store.put_stage(id, stage, &[(ENRICHED, &json(&items)), (ENRICHMENT_REPORT, &json(&report))])?;
        }
        Stage::Harmonized => {
            let items: Vec<EnrichedItem> = load(store, id, Stage::Enriched, ENRICHED)?;
            let harmonized = harmonize_all(
                &items,
                svc.harmonizer.as_deref(),
                cfg.harmonize.max_summary_words,
                cfg.enrichment.concurrency,
            );
            store.put_stage(id, stage, &[(HARMONIZED, &json(&harmonized))])?;
        }
        Stage::Embedded => {
            let items: Vec<HarmonizedItem> = load(store, id, Stage::Harmonized, HARMONIZED)?;
            let texts: Vec<(EventId, String)> =
                items.iter().map(|h| (h.id().clone(), embedding_text(h, cfg.harmonize.enabled))).collect();
            let provider_id = svc.embedder.id();
            let resume = load_partial_vectors(store, id, &provider_id);
            match embed_dataset(&texts, svc.embedder.as_ref(), cfg.embed.batch_size, resume) {
                Ok(vectors) => {
                    let (bytes, meta) = encode_vectors(&vectors, &provider_id);
                    store.put_stage(id, stage, &[(VECTORS, &bytes), (VECTORS_META, &json(&meta))])?;
                }
                Err(interrupted) => {
                    let (bytes, meta) = encode_vectors(&interrupted.done, &provider_id);
                    store.put_artifact(id, PARTIAL_VECTORS, &bytes)?;
                    store.put_artifact(id, PARTIAL_VECTORS_META, &json(&meta))?;
                    return Err(interrupted.source.into());
                }
            }
        }
        Stage::LaidOut => {
            let items: Vec<HarmonizedItem> = load(store, id, Stage::Harmonized, HARMONIZED)?;
            let vectors = load_vectors(store, id)?;
            let infos: Vec<PointInfo> = items.iter().map(PointInfo::from).collect();
            let set = VectorSet::from_rows(&vectors.iter().map(|v| v.vector.as_slice()).collect::<Vec<_>>());
            let layout = semantic_map(&infos, &set, &cfg.layout)?;
            store.put_stage(id, stage, &[(LAYOUT, &json(&layout)), (LAYOUT_COORDS, &encode_coords(&layout))])?;
        }
        Stage::Ready => {
            let items: Vec<HarmonizedItem> = load(store, id, Stage::Harmonized, HARMONIZED)?;
            let mut map: Layout2D = load(store, id, Stage::LaidOut, LAYOUT)?;
            let summaries: Vec<&str> = items.iter().map(|h| h.summary.as_str()).collect();
            let tree = build_topics(&mut map.points, &summaries, svc.labeler.as_deref(), &cfg.topics);
            let labels: Vec<_> = tree.labels().into_iter().cloned().collect();
            let timeline = TimelineIndex::build(&map.points, &labels).timeline();
            store.put_stage(id, stage, &[(MAP, &json(&map)), (TOPICS, &json(&tree)), (TIMELINE, &json(&timeline))])?;
            drop_partial(store, id)?;
        }
    }
    Ok(())
}

fn drop_partial(store: &Store, id: &str) -> Result<(), PipelineError> {
    store.remove_artifact(id, PARTIAL_VECTORS)?;
    store.remove_artifact(id, PARTIAL_VECTORS_META)?;
    Ok(())
}

/// Runs every remaining stage of a dataset, holding its writer lock.
/// `progress` is called after each stage becomes durable.
pub fn run(store: &Store, id: &str, svc: &Services, progress: &dyn Fn(Stage)) -> Result<Manifest, PipelineError> {
    let _lock = store.lock(id)?;
    loop {
        let m = store.manifest(id)?;
        let Some(next) = m.stage.next() else { return Ok(m) };
        run_stage(store, id, next, &m.config, svc)?;
        progress(next);
    }
}

/// Creates a dataset from uploaded files and stores them as its raw stage.
pub fn create_from_uploads(store: &Store, cfg: &DatasetConfig, files: &[ExportFile]) -> Result<String, PipelineError> {
    let id = store.create_dataset(cfg)?;
    for f in files {
        store.put_raw(&id, &crate::store::sanitize_name(&f.name), &f.bytes)?;
    }
    Ok(id)
}

/// Display metadata for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub item_id: EventId,
    pub platform: Platform,
    pub watched_at: chrono::DateTime<chrono::Utc>,
    pub title: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thumbnail_url: Option<String>,
}

fn thumbnail(h: &HarmonizedItem) -> Option<String> {
    match h.item.event.platform {
        Platform::Youtube => h
            .item
            .event
            .raw_url
            .as_deref()
            .and_then(crate::enrichment::youtube_video_id)
            .map(|v| format!("https://i.ytimg.com/vi/{v}/hqdefault.jpg")),
        _ => None,
    }
}

/// Everything needed to answer queries about a finished dataset.
pub struct ReadyDataset {
    pub manifest: Manifest,
    pub map: Layout2D,
    pub topics: TopicTree,
    pub timeline: TimelineIndex,
    pub items: HashMap<EventId, ItemInfo>,
}

/// Loads a dataset that has reached `ready`.
pub fn load_ready(store: &Store, id: &str) -> Result<ReadyDataset, PipelineError> {
    let manifest = store.manifest(id)?;
    if manifest.stage != Stage::Ready {
        return Err(PipelineError::NotReady(manifest.stage));
    }
    let map: Layout2D = load(store, id, Stage::Ready, MAP)?;
    let topics: TopicTree = load(store, id, Stage::Ready, TOPICS)?;
    let harmonized: Vec<HarmonizedItem> = load(store, id, Stage::Harmonized, HARMONIZED)?;
    let labels: Vec<_> = topics.labels().into_iter().cloned().collect();
    let timeline = TimelineIndex::build(&map.points, &labels);
    let items = harmonized
        .iter()
        .map(|h| {
            let info = ItemInfo {
                item_id: h.id().clone(),
                platform: h.item.event.platform,
                watched_at: h.item.event.watched_at,
                title: h.item.title.clone(),
                summary: h.summary.clone(),
                thumbnail_url: thumbnail(h),
            };
            (h.id().clone(), info)
        })
        .collect();
    Ok(ReadyDataset { manifest, map, topics, timeline, items })
}

/// A request for an additional layout of a finished dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutRequest {
    /// UMAP again, optionally with another seed.
    SemanticMap {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Topic grid without the listed topics.
    Grid {
        #[serde(default)]
        exclude: Vec<TopicId>,
    },
    /// Similarity to two concepts (or time).
    SemanticAxes { x: Axis, y: Axis },
}

impl LayoutRequest {
    /// Checks what can be checked without computing anything.
    pub fn validate(&self) -> Result<(), LayoutError> {
        if let LayoutRequest::SemanticAxes { x, y } = self {
            for a in [x, y] {
                if matches!(a, Axis::Concept(c) if c.trim().is_empty()) {
                    return Err(LayoutError::EmptyConcept);
                }
            }
        }
        Ok(())
    }
}

/// Name under which an extra layout is stored.
pub fn layout_artifact(layout_id: &str) -> String {
    format!("layout:{layout_id}")
}

/// Computes and stores another layout of a ready dataset.
pub fn create_layout(store: &Store, id: &str, req: &LayoutRequest, svc: &Services) -> Result<Layout2D, PipelineError> {
    req.validate()?;
    let ready = load_ready(store, id)?;
    let layout = match req {
        LayoutRequest::Grid { exclude } => {
            let labels: Vec<_> = ready.topics.topics.iter().map(|t| t.label.clone()).collect();
            grid_layout(&ready.map.points, &labels, &exclude.iter().copied().collect::<BTreeSet<_>>())
        }
        LayoutRequest::SemanticMap { seed } => {
            let vectors = load_vectors(store, id)?;
            let set = VectorSet::from_rows(&vectors.iter().map(|v| v.vector.as_slice()).collect::<Vec<_>>());
            let mut cfg = ready.manifest.config.layout.clone();
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            let infos: Vec<PointInfo> = ready.map.points.iter().map(point_info).collect();
            let mut l = semantic_map(&infos, &set, &cfg)?;
            copy_topics(&mut l, &ready.map);
            l
        }
        LayoutRequest::SemanticAxes { x, y } => {
            let vectors = load_vectors(store, id)?;
            let set = VectorSet::from_rows(&vectors.iter().map(|v| v.vector.as_slice()).collect::<Vec<_>>());
            let infos: Vec<PointInfo> = ready.map.points.iter().map(point_info).collect();
            let mut l = semantic_axes_layout(&infos, &set, x, y, svc.embedder.as_ref())?;
            copy_topics(&mut l, &ready.map);
            l
        }
    };
    let _lock = store.lock(id)?;
    store.put_artifact(id, &layout_artifact(&layout.layout_id), &json(&layout))?;
    Ok(layout)
}

fn point_info(p: &crate::model::MapPoint) -> PointInfo {
    PointInfo { item_id: p.item_id.clone(), platform: p.platform, watched_at: p.watched_at }
}

fn copy_topics(layout: &mut Layout2D, from: &Layout2D) {
    for (p, q) in layout.points.iter_mut().zip(&from.points) {
        p.topic_id = q.topic_id;
    }
}

/// Reads a stored extra layout, or the main map for its own id.
pub fn get_layout(store: &Store, id: &str, layout_id: &str) -> Result<Layout2D, PipelineError> {
    let ready_map: Layout2D = load(store, id, Stage::Ready, MAP)?;
    if ready_map.layout_id == layout_id {
        return Ok(ready_map);
    }
    Ok(serde_json::from_slice(&store.get_artifact(id, &layout_artifact(layout_id))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn netflix_csv(n: usize) -> ExportFile {
        let shows = ["Minecraft building", "Pasta cooking", "Piano lessons", "Street food travel"];
        let mut body = String::from("Title,Date\n");
        for i in 0..n {
            body.push_str(&format!("\"{} {}: Season 1: Episode {}\",\"{:02}/0{}/2023\"\n", shows[i % 4], i, i, i % 28 + 1, i % 9 + 1));
        }
        ExportFile::new("NetflixViewingHistory.csv", body.into_bytes())
    }

    fn small_config() -> DatasetConfig {
        let mut cfg = DatasetConfig::default();
        cfg.embed.dimension = 16;
        cfg.embed.batch_size = 4;
        cfg.layout.n_epochs = Some(50);
        cfg
    }

    /// Delegates to the local embedder but fails every call once `budget`
    /// batches have been served.
    struct FlakyEmbedder {
        inner: LocalEmbedder,
        budget: AtomicUsize,
        seen: Mutex<Vec<String>>,
    }

    impl EmbeddingProvider for FlakyEmbedder {
        fn id(&self) -> String {
            self.inner.id()
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            if self.budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1)).is_err() {
                return Err(EmbedError::ProviderUnavailable("quota".into()));
            }
            self.seen.lock().unwrap().extend(texts.iter().cloned());
            self.inner.embed_batch(texts)
        }
    }

    #[test]
    fn offline_run_reaches_ready_and_purges_raw() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let cfg = small_config();
        let id = create_from_uploads(&store, &cfg, &[netflix_csv(12)]).unwrap();
        let stages = Mutex::new(Vec::new());
        let m = run(&store, &id, &Services::offline(&cfg), &|s| stages.lock().unwrap().push(s)).unwrap();
        assert_eq!(m.stage, Stage::Ready);
        assert_eq!(*stages.lock().unwrap(), Stage::ALL[1..].to_vec());
        assert!(m.raw_purged_at.is_some());
        assert!(!tmp.path().join(&id).join("raw").exists());
        let ready = load_ready(&store, &id).unwrap();
        assert_eq!(ready.map.points.len(), 12);
        assert_eq!(ready.timeline.len(), 12);
        assert!(ready.topics.is_consistent());
    }

    #[test]
    fn unknown_upload_rejected() {
        let files = vec![ExportFile::new("notes.txt", b"hello".to_vec())];
        assert!(matches!(bundle_uploads(files), Err(IngestError::UnknownExport)));
        assert!(matches!(bundle_uploads(Vec::new()), Err(IngestError::EmptyBundle)));
    }

    #[test]
    fn embedding_resumes_after_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let cfg = small_config();
        let id = create_from_uploads(&store, &cfg, &[netflix_csv(10)]).unwrap();
        let mut svc = Services::offline(&cfg);
        let flaky = Arc::new(FlakyEmbedder {
            inner: LocalEmbedder::new(16, 0),
            budget: AtomicUsize::new(2),
            seen: Mutex::new(Vec::new()),
        });
        svc.embedder = flaky.clone();
        assert!(matches!(run(&store, &id, &svc, &|_| {}), Err(PipelineError::Embed(_))));
        assert_eq!(store.manifest(&id).unwrap().stage, Stage::Harmonized);
        assert_eq!(flaky.seen.lock().unwrap().len(), 8);

        flaky.budget.store(usize::MAX, Ordering::SeqCst);
        let m = run(&store, &id, &svc, &|_| {}).unwrap();
        assert_eq!(m.stage, Stage::Ready);
        assert_eq!(flaky.seen.lock().unwrap().len(), 10);
        assert!(store.get_artifact(&id, PARTIAL_VECTORS).is_err());

        let fresh = tempfile::tempdir().unwrap();
        let other = Store::open(fresh.path()).unwrap();
        let id2 = create_from_uploads(&other, &cfg, &[netflix_csv(10)]).unwrap();
        run(&other, &id2, &Services::offline(&cfg), &|_| {}).unwrap();
        assert_eq!(
            store.get_stage(&id, Stage::Embedded, VECTORS).unwrap(),
            other.get_stage(&id2, Stage::Embedded, VECTORS).unwrap()
        );
    }

    #[test]
    fn crash_between_stages_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let cfg = small_config();
        let id = create_from_uploads(&store, &cfg, &[netflix_csv(8)]).unwrap();
        let svc = Services::offline(&cfg);
        let crashed = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            run(&store, &id, &svc, &|s| {
                if s == Stage::Harmonized {
                    panic!("simulated crash");
                }
            })
        }));
        assert!(crashed.is_err());
        assert_eq!(store.manifest(&id).unwrap().stage, Stage::Harmonized);
        let resumed = Mutex::new(Vec::new());
        run(&store, &id, &svc, &|s| resumed.lock().unwrap().push(s)).unwrap();
        assert_eq!(*resumed.lock().unwrap(), vec![Stage::Embedded, Stage::LaidOut, Stage::Ready]);
    }

    #[test]
    fn extra_layouts_are_stored_and_served() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let cfg = small_config();
        let id = create_from_uploads(&store, &cfg, &[netflix_csv(12)]).unwrap();
        let svc = Services::offline(&cfg);
        assert!(matches!(
            create_layout(&store, &id, &LayoutRequest::Grid { exclude: vec![] }, &svc),
            Err(PipelineError::NotReady(Stage::Uploaded))
        ));
        run(&store, &id, &svc, &|_| {}).unwrap();

        let req = LayoutRequest::SemanticAxes { x: Axis::Concept("minecraft".into()), y: Axis::Time };
        let axes = create_layout(&store, &id, &req, &svc).unwrap();
        assert_eq!(get_layout(&store, &id, &axes.layout_id).unwrap(), axes);
        let map = load_ready(&store, &id).unwrap().map;
        assert_eq!(get_layout(&store, &id, &map.layout_id).unwrap(), map);
        assert!(matches!(get_layout(&store, &id, "nope"), Err(PipelineError::Store(StoreError::NotFound(_)))));

        let empty = LayoutRequest::SemanticAxes { x: Axis::Concept(" ".into()), y: Axis::Time };
        assert!(matches!(create_layout(&store, &id, &empty, &svc), Err(PipelineError::Layout(LayoutError::EmptyConcept))));
        let grid = create_layout(&store, &id, &LayoutRequest::Grid { exclude: vec![] }, &svc).unwrap();
        assert_eq!(grid.points.len(), 12);
    }

    #[test]
    fn layout_request_json_shape() {
        let req: LayoutRequest =
            serde_json::from_str(r#"{"kind":"semantic_axes","x":{"concept":"gaming"},"y":"time"}"#).unwrap();
        assert_eq!(req, LayoutRequest::SemanticAxes { x: Axis::Concept("gaming".into()), y: Axis::Time });
        let req: LayoutRequest = serde_json::from_str(r#"{"kind":"semantic_map"}"#).unwrap();
        assert_eq!(req, LayoutRequest::SemanticMap { seed: None });
    }
}
