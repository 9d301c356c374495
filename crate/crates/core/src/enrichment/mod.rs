//! Fills in the titles and descriptions that exports leave out.
//!
//! Every network call sits behind [`MetadataProvider`], so the whole stage can
//! run against canned fixtures. Provider failures only ever turn into misses:
//! an item without metadata keeps its export fields and is tagged
//! [`EnrichmentSource::None`].

mod cache;
mod providers;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::EnrichmentConfig;
use crate::model::{EnrichedItem, EnrichmentSource, Platform, WatchEvent};

pub use cache::{CacheEntry, EnrichmentCache};
pub use providers::{
    resolve_tiktok_url, tmdb_query, youtube_video_id, FixtureProvider, MissReason, TikTokResolver, TmdbSearch,
    YoutubeTranscripts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    UrlResolver,
    TranscriptApi,
    Tmdb,
    Fixture,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::UrlResolver => "url_resolver",
            ProviderKind::TranscriptApi => "transcript_api",
            ProviderKind::Tmdb => "tmdb",
            ProviderKind::Fixture => "fixture",
        }
    }

    /// Source tag for items whose metadata came from this kind of lookup.
    pub fn source(self) -> EnrichmentSource {
        match self {
            ProviderKind::UrlResolver => EnrichmentSource::UrlResolution,
            ProviderKind::TranscriptApi => EnrichmentSource::TranscriptApi,
            ProviderKind::Tmdb => EnrichmentSource::Tmdb,
            ProviderKind::Fixture => EnrichmentSource::None,
        }
    }
}

/// Result of a successful lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub title: Option<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
}

pub trait MetadataProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Which enrichment source an item gets when this provider hits.
    fn source(&self) -> EnrichmentSource {
        self.kind().source()
    }

    /// Cache key for an event; `None` when the event cannot be looked up.
    fn lookup_key(&self, event: &WatchEvent) -> Option<String>;

    /// `Ok(None)` is a definitive miss and is cached; errors are not.
    fn lookup(&self, event: &WatchEvent) -> Result<Option<Metadata>, ProviderError>;
}

/// Provider per platform.
#[derive(Clone, Default)]
pub struct ProviderSet {
    pub youtube: Option<Arc<dyn MetadataProvider>>,
    pub netflix: Option<Arc<dyn MetadataProvider>>,
    pub tiktok: Option<Arc<dyn MetadataProvider>>,
}

impl ProviderSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn for_platform(&self, p: Platform) -> Option<&Arc<dyn MetadataProvider>> {
        match p {
            Platform::Youtube => self.youtube.as_ref(),
            Platform::Netflix => self.netflix.as_ref(),
            Platform::Tiktok => self.tiktok.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnrichOptions {
    pub transcript_max_chars: usize,
    pub concurrency: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        Self::from_config(&EnrichmentConfig::default())
    }
}

impl EnrichOptions {
    pub fn from_config(cfg: &EnrichmentConfig) -> Self {
        EnrichOptions {
            transcript_max_chars: cfg.transcript_max_chars,
            concurrency: cfg.concurrency.max(1),
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderStats {
    pub hits: usize,
    pub misses: usize,
    pub cache_hits: usize,
    pub failures: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub per_provider: BTreeMap<String, ProviderStats>,
    /// Items whose platform has no provider configured.
    pub unprovided: usize,
}

enum Outcome {
    Hit(Metadata),
    Miss,
}

struct Lookup {
    outcome: Outcome,
    from_cache: bool,
    failed: bool,
    retries: usize,
}

/// Enriches every event. Output is ordered by `(watched_at, id)`.
pub fn enrich(
    events: &[WatchEvent],
    providers: &ProviderSet,
    cache: &EnrichmentCache,
    opts: &EnrichOptions,
) -> (Vec<EnrichedItem>, EnrichmentReport) {
    let mut report = EnrichmentReport::default();
    let mut items = Vec::with_capacity(events.len());

    for platform in Platform::ALL {
        let group: Vec<&WatchEvent> = events.iter().filter(|e| e.platform == platform).collect();
        if group.is_empty() {
            continue;
        }
        let Some(provider) = providers.for_platform(platform) else {
            report.unprovided += group.len();
            items.extend(group.into_iter().map(|e| build_item(e, None, opts)));
            continue;
        };
        let lookups = run_lookups(&group, provider.as_ref(), cache, opts);
        let stats = report.per_provider.entry(provider.kind().as_str().to_string()).or_default();
        for (event, lookup) in group.into_iter().zip(lookups) {
            stats.retries += lookup.retries;
            if lookup.from_cache {
                stats.cache_hits += 1;
            }
            if lookup.failed {
                stats.failures += 1;
            }
            let hit = match lookup.outcome {
                Outcome::Hit(meta) => {
                    stats.hits += 1;
                    Some((meta, provider.source()))
                }
                Outcome::Miss => {
                    stats.misses += 1;
                    None
                }
            };
            items.push(build_item(event, hit, opts));
        }
    }

    items.sort_by(|a, b| a.event.order_key().cmp(&b.event.order_key()));
    (items, report)
}

/// Fans lookups out over at most `opts.concurrency` threads; results keep
/// input order.
fn run_lookups(
    group: &[&WatchEvent],
    provider: &dyn MetadataProvider,
    cache: &EnrichmentCache,
    opts: &EnrichOptions,
) -> Vec<Lookup> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Lookup>>> = Mutex::new((0..group.len()).map(|_| None).collect());
    let workers = opts.concurrency.min(group.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= group.len() {
                    break;
                }
                let lookup = lookup_one(group[i], provider, cache, opts);
                slots.lock().unwrap()[i] = Some(lookup);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|s| s.expect("every slot filled")).collect()
}

fn lookup_one(
    event: &WatchEvent,
    provider: &dyn MetadataProvider,
    cache: &EnrichmentCache,
    opts: &EnrichOptions,
) -> Lookup {
    let Some(key) = provider.lookup_key(event) else {
        return Lookup { outcome: Outcome::Miss, from_cache: false, failed: false, retries: 0 };
    };
    if let Some(entry) = cache.get(provider.kind(), &key) {
        let outcome = entry.result.map_or(Outcome::Miss, Outcome::Hit);
        return Lookup { outcome, from_cache: true, failed: false, retries: 0 };
    }
    let mut retries = 0;
    loop {
        match provider.lookup(event) {
            Ok(result) => {
                cache.insert(provider.kind(), &key, result.clone());
                let outcome = result.map_or(Outcome::Miss, Outcome::Hit);
                return Lookup { outcome, from_cache: false, failed: false, retries };
            }
            Err(ProviderError::RateLimited { retry_after }) if (retries as u32) < opts.max_retries => {
                let backoff = opts.backoff_base * 2u32.saturating_pow(retries as u32);
                std::thread::sleep(retry_after.map_or(backoff, |r| r.max(backoff)));
                retries += 1;
            }
            Err(err) => {
                tracing::warn!(provider = provider.kind().as_str(), %err, "lookup failed, falling back");
                return Lookup { outcome: Outcome::Miss, from_cache: false, failed: true, retries };
            }
        }
    }
}

/// Title used when neither the export nor a provider supplied one.
pub fn placeholder_title(platform: Platform) -> String {
    format!("{} video", platform.display_name())
}

fn build_item(event: &WatchEvent, hit: Option<(Metadata, EnrichmentSource)>, opts: &EnrichOptions) -> EnrichedItem {
    let fallback_title = || event.raw_title.clone().unwrap_or_else(|| placeholder_title(event.platform));
    match hit {
        Some((meta, source)) => {
            let title = event
                .raw_title
                .clone()
                .or_else(|| meta.title.clone().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()))
                .unwrap_or_else(fallback_title);
            let mut description = meta.description.trim().to_string();
            if source == EnrichmentSource::TranscriptApi {
                description = truncate_chars(&description, opts.transcript_max_chars);
            }
            let source = if description.is_empty() { EnrichmentSource::None } else { source };
            EnrichedItem { event: event.clone(), title, description, enrichment_source: source }
        }
        None => EnrichedItem {
            event: event.clone(),
            title: fallback_title(),
            description: String::new(),
            enrichment_source: EnrichmentSource::None,
        },
    }
}

pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::collections::HashMap;

    fn netflix(title: &str) -> WatchEvent {
        WatchEvent::new(Platform::Netflix, Some(title.into()), None, Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap(), Utc::now())
            .unwrap()
    }

    fn tmdb_fixture(entries: &[(&str, Option<&str>)]) -> Arc<FixtureProvider> {
        let map: HashMap<String, Option<Metadata>> = entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.map(|d| Metadata { title: None, description: d.to_string() })))
            .collect();
        Arc::new(FixtureProvider::new(ProviderKind::Tmdb, map))
    }

    #[test]
    fn tmdb_fixture_fills_description() {
        let provider = tmdb_fixture(&[("Alice in Borderland", Some("Gamers are trapped in an empty Tokyo."))]);
        let providers = ProviderSet { netflix: Some(provider), ..ProviderSet::none() };
        let (items, report) = enrich(
            &[netflix("Alice in Borderland: Season 1: Episode 1")],
            &providers,
            &EnrichmentCache::in_memory(),
            &EnrichOptions::default(),
        );
        assert_eq!(items[0].description, "Gamers are trapped in an empty Tokyo.");
        assert_eq!(items[0].enrichment_source, EnrichmentSource::Tmdb);
        assert_eq!(items[0].title, "Alice in Borderland: Season 1: Episode 1");
        assert_eq!(report.per_provider["fixture"].hits, 1);
    }

    #[test]
    fn miss_falls_back_to_export_fields() {
        let providers = ProviderSet { netflix: Some(tmdb_fixture(&[])), ..ProviderSet::none() };
        let (items, _) =
            enrich(&[netflix("Obscure")], &providers, &EnrichmentCache::in_memory(), &EnrichOptions::default());
        assert_eq!(items[0].title, "Obscure");
        assert_eq!(items[0].description, "");
        assert_eq!(items[0].enrichment_source, EnrichmentSource::None);
    }

    #[test]
    fn cache_prevents_second_lookup() {
        let provider = tmdb_fixture(&[("A", Some("a show")), ("B", None)]);
        let providers = ProviderSet { netflix: Some(provider.clone()), ..ProviderSet::none() };
        let cache = EnrichmentCache::in_memory();
        let events = [netflix("A"), netflix("B")];
        let (first, _) = enrich(&events, &providers, &cache, &EnrichOptions::default());
        assert_eq!(provider.calls(), 2);
        let (second, report) = enrich(&events, &providers, &cache, &EnrichOptions::default());
        assert_eq!(provider.calls(), 2);
        assert_eq!(report.per_provider["fixture"].cache_hits, 2);
        assert_eq!(first, second);
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
        err: ProviderError,
    }

    impl MetadataProvider for Flaky {
        fn kind(&self) -> ProviderKind {
            ProviderKind::Tmdb
        }
        fn lookup_key(&self, e: &WatchEvent) -> Option<String> {
            e.raw_title.clone()
        }
        fn lookup(&self, _: &WatchEvent) -> Result<Option<Metadata>, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.err.clone())
            } else {
                Ok(Some(Metadata { title: None, description: "ok".into() }))
            }
        }
    }

    fn fast() -> EnrichOptions {
        EnrichOptions { backoff_base: Duration::ZERO, ..EnrichOptions::default() }
    }

    #[test]
    fn rate_limit_retries_then_succeeds() {
        let p = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 2, err: ProviderError::RateLimited { retry_after: None } });
        let providers = ProviderSet { netflix: Some(p.clone()), ..ProviderSet::none() };
        let (items, report) = enrich(&[netflix("A")], &providers, &EnrichmentCache::in_memory(), &fast());
        assert_eq!(items[0].enrichment_source, EnrichmentSource::Tmdb);
        assert_eq!(report.per_provider["tmdb"].retries, 2);
    }

    #[test]
    fn rate_limit_is_bounded() {
        let p = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 100, err: ProviderError::RateLimited { retry_after: None } });
        let providers = ProviderSet { netflix: Some(p.clone()), ..ProviderSet::none() };
        let cache = EnrichmentCache::in_memory();
        let (items, report) = enrich(&[netflix("A")], &providers, &cache, &fast());
        assert_eq!(items[0].enrichment_source, EnrichmentSource::None);
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
        assert_eq!(report.per_provider["tmdb"].failures, 1);
        // failures are not cached
        assert!(cache.is_empty());
    }

    #[test]
    fn unavailable_is_a_miss_not_an_error() {
        let p = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 100, err: ProviderError::Unavailable("down".into()) });
        let providers = ProviderSet { netflix: Some(p.clone()), ..ProviderSet::none() };
        let (items, _) = enrich(&[netflix("A"), netflix("B")], &providers, &EnrichmentCache::in_memory(), &fast());
        assert_eq!(items.len(), 2);
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn url_only_event_without_metadata_gets_placeholder_title() {
        let e = WatchEvent::new(Platform::Tiktok, None, Some("https://t/1".into()), Utc::now(), Utc::now()).unwrap();
        let (items, report) = enrich(&[e], &ProviderSet::none(), &EnrichmentCache::in_memory(), &EnrichOptions::default());
        assert_eq!(items[0].title, "TikTok video");
        assert!(items[0].is_valid());
        assert_eq!(report.unprovided, 1);
    }

    #[test]
    fn transcripts_are_truncated() {
        let long = "word ".repeat(1000);
        let e = WatchEvent::new(Platform::Youtube, Some("T".into()), Some("https://www.youtube.com/watch?v=abc".into()), Utc::now(), Utc::now()).unwrap();
        let map = HashMap::from([("abc".to_string(), Some(Metadata { title: None, description: long }))]);
        let providers = ProviderSet {
            youtube: Some(Arc::new(FixtureProvider::new(ProviderKind::TranscriptApi, map))),
            ..ProviderSet::none()
        };
        let (items, _) = enrich(&[e], &providers, &EnrichmentCache::in_memory(), &EnrichOptions::default());
        assert_eq!(items[0].description.chars().count(), 2000);
        assert_eq!(items[0].enrichment_source, EnrichmentSource::TranscriptApi);
    }

    #[test]
    fn output_is_time_ordered_across_platforms() {
        let t = |d| Utc.with_ymd_and_hms(2023, 1, d, 0, 0, 0).unwrap();
        let events = vec![
            WatchEvent::new(Platform::Tiktok, None, Some("https://t/1".into()), t(3), Utc::now()).unwrap(),
            WatchEvent::new(Platform::Netflix, Some("N".into()), None, t(1), Utc::now()).unwrap(),
            WatchEvent::new(Platform::Youtube, Some("Y".into()), None, t(2), Utc::now()).unwrap(),
        ];
        let (items, _) = enrich(&events, &ProviderSet::none(), &EnrichmentCache::in_memory(), &EnrichOptions::default());
        let platforms: Vec<_> = items.iter().map(|i| i.event.platform).collect();
        assert_eq!(platforms, vec![Platform::Netflix, Platform::Youtube, Platform::Tiktok]);
    }
}
