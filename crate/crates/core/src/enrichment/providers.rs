use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use super::{Metadata, MetadataProvider, ProviderError, ProviderKind, ProviderSet};
use crate::http::{fill_template, HttpClient, HttpResponse};
use crate::model::WatchEvent;

/// Why a lookup produced nothing.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MissReason {
    #[error("not_found")]
    NotFound,
    #[error("bad_payload")]
    BadPayload,
    #[error("rate_limited")]
    RateLimited(Option<u64>),
    #[error("network: {0}")]
    Network(String),
}

impl MissReason {
    fn into_provider_result(self) -> Result<Option<Metadata>, ProviderError> {
        match self {
            MissReason::NotFound | MissReason::BadPayload => Ok(None),
            MissReason::RateLimited(secs) => {
                Err(ProviderError::RateLimited { retry_after: secs.map(Duration::from_secs) })
            }
            MissReason::Network(msg) => Err(ProviderError::Unavailable(msg)),
        }
    }
}

fn fetch(http: &dyn HttpClient, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, MissReason> {
    let resp = http.get(url, headers).map_err(|e| MissReason::Network(e.0))?;
    match resp.status {
        404 | 410 => Err(MissReason::NotFound),
        429 => Err(MissReason::RateLimited(resp.retry_after)),
        _ if resp.is_success() => Ok(resp),
        s => Err(MissReason::Network(format!("status {s}"))),
    }
}

/// Resolves a TikTok video URL through an oEmbed endpoint and returns the
/// creator's title and the caption.
pub fn resolve_tiktok_url(
    http: &dyn HttpClient,
    oembed_template: &str,
    url: &str,
) -> Result<(String, String), MissReason> {
    let request = fill_template(oembed_template, &[("url", url)]);
    let resp = fetch(http, &request, &[]).inspect_err(|reason| {
        tracing::debug!(%url, %reason, "tiktok resolution missed");
    })?;
    let doc: Value = serde_json::from_slice(&resp.body).map_err(|_| MissReason::BadPayload)?;
    let caption = doc.get("title").and_then(Value::as_str).map(str::trim).unwrap_or("");
    if caption.is_empty() {
        return Err(MissReason::BadPayload);
    }
    let title = caption.lines().next().unwrap_or(caption).trim().to_string();
    Ok((title, caption.to_string()))
}

/// Extracts the video id from the common YouTube URL shapes.
pub fn youtube_video_id(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    let host = parsed.host_str()?.trim_start_matches("www.").trim_start_matches("m.");
    let id = match host {
        "youtu.be" => parsed.path_segments()?.next().map(str::to_string),
        h if h.ends_with("youtube.com") => {
            let mut segs = parsed.path_segments()?;
            match segs.next() {
                Some("watch") => parsed.query_pairs().find(|(k, _)| k == "v").map(|(_, v)| v.into_owned()),
                Some("shorts") | Some("embed") | Some("live") => segs.next().map(str::to_string),
                _ => None,
            }
        }
        _ => None,
    }?;
    (!id.is_empty()).then_some(id)
}

const EPISODE_MARKERS: [&str; 7] = ["Season", "Part", "Volume", "Chapter", "Episode", "Limited Series", "Series"];

/// Series title for a Netflix viewing title: everything before the first
/// `: Season …`, `: Episode …` style segment.
pub fn tmdb_query(title: &str) -> String {
    let parts: Vec<&str> = title.split(": ").collect();
    let cut = parts
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, p)| EPISODE_MARKERS.iter().any(|m| p.starts_with(m)))
        .map_or(parts.len(), |(i, _)| i);
    parts[..cut].join(": ").trim().to_string()
}

/// TikTok oEmbed resolver.
pub struct TikTokResolver {
    http: Arc<dyn HttpClient>,
    template: String,
}

impl TikTokResolver {
    pub fn new(http: Arc<dyn HttpClient>, template: impl Into<String>) -> Self {
        TikTokResolver { http, template: template.into() }
    }
}

impl MetadataProvider for TikTokResolver {
    fn kind(&self) -> ProviderKind {
        ProviderKind::UrlResolver
    }

    fn lookup_key(&self, event: &WatchEvent) -> Option<String> {
        event.raw_url.clone()
    }

    fn lookup(&self, event: &WatchEvent) -> Result<Option<Metadata>, ProviderError> {
        let Some(url) = &event.raw_url else { return Ok(None) };
        match resolve_tiktok_url(self.http.as_ref(), &self.template, url) {
            Ok((title, caption)) => Ok(Some(Metadata { title: Some(title), description: caption })),
            Err(reason) => reason.into_provider_result(),
        }
    }
}

/// Automatic-transcript lookup for YouTube videos.
pub struct YoutubeTranscripts {
    http: Arc<dyn HttpClient>,
    template: String,
    api_key: Option<String>,
}

impl YoutubeTranscripts {
    pub fn new(http: Arc<dyn HttpClient>, template: impl Into<String>, api_key: Option<String>) -> Self {
        YoutubeTranscripts { http, template: template.into(), api_key }
    }
}

/// Accepts plain text, `{"transcript": "..."}`, `{"text": "..."}` or a list
/// of `{"text": ...}` segments.
fn transcript_text(body: &[u8]) -> Result<String, MissReason> {
    let text = std::str::from_utf8(body).map_err(|_| MissReason::BadPayload)?;
    let Ok(doc) = serde_json::from_str::<Value>(text) else {
        return Ok(text.trim().to_string());
    };
    let segments = |v: &Value| -> Option<String> {
        let parts: Vec<&str> = v.as_array()?.iter().filter_map(|s| s.get("text")?.as_str()).collect();
        Some(parts.join(" "))
    };
    let out = match &doc {
        Value::String(s) => Some(s.clone()),
        Value::Array(_) => segments(&doc),
        Value::Object(map) => map
            .get("transcript")
            .or_else(|| map.get("text"))
            .and_then(|v| v.as_str().map(str::to_string).or_else(|| segments(v))),
        _ => None,
    };
    out.map(|s| s.trim().to_string()).ok_or(MissReason::BadPayload)
}

impl MetadataProvider for YoutubeTranscripts {
    fn kind(&self) -> ProviderKind {
        ProviderKind::TranscriptApi
    }

    fn lookup_key(&self, event: &WatchEvent) -> Option<String> {
        youtube_video_id(event.raw_url.as_deref()?)
    }

    fn lookup(&self, event: &WatchEvent) -> Result<Option<Metadata>, ProviderError> {
        let Some(id) = self.lookup_key(event) else { return Ok(None) };
        let url = fill_template(&self.template, &[("video_id", &id)]);
        let auth;
        let headers: Vec<(&str, &str)> = match &self.api_key {
            Some(k) => {
                auth = format!("Bearer {k}");
                vec![("authorization", auth.as_str())]
            }
            None => Vec::new(),
        };
        let result = fetch(self.http.as_ref(), &url, &headers).and_then(|r| transcript_text(&r.body));
        match result {
            Ok(text) if text.is_empty() => Ok(None),
            Ok(text) => Ok(Some(Metadata { title: None, description: text })),
            Err(reason) => reason.into_provider_result(),
        }
    }
}

/// TMDB multi-search; the top-ranked result's overview becomes the description.
pub struct TmdbSearch {
    http: Arc<dyn HttpClient>,
    template: String,
    api_key: String,
}

impl TmdbSearch {
    pub fn new(http: Arc<dyn HttpClient>, template: impl Into<String>, api_key: impl Into<String>) -> Self {
        TmdbSearch { http, template: template.into(), api_key: api_key.into() }
    }
}

impl MetadataProvider for TmdbSearch {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Tmdb
    }

    fn lookup_key(&self, event: &WatchEvent) -> Option<String> {
        let q = tmdb_query(event.raw_title.as_deref()?);
        (!q.is_empty()).then_some(q)
    }

    fn lookup(&self, event: &WatchEvent) -> Result<Option<Metadata>, ProviderError> {
        let Some(query) = self.lookup_key(event) else { return Ok(None) };
        let url = fill_template(&self.template, &[("query", &query), ("key", &self.api_key)]);
        let parsed = fetch(self.http.as_ref(), &url, &[]).and_then(|r| {
            let doc: Value = serde_json::from_slice(&r.body).map_err(|_| MissReason::BadPayload)?;
            let results = doc.get("results").and_then(Value::as_array).ok_or(MissReason::BadPayload)?;
            let Some(top) = results.first() else { return Err(MissReason::NotFound) };
            let overview = top.get("overview").and_then(Value::as_str).unwrap_or("").trim().to_string();
            let name = top.get("name").or_else(|| top.get("title")).and_then(Value::as_str).map(str::to_string);
            if overview.is_empty() {
                Err(MissReason::NotFound)
            } else {
                Ok(Metadata { title: name, description: overview })
            }
        });
        match parsed {
            Ok(meta) => Ok(Some(meta)),
            Err(reason) => reason.into_provider_result(),
        }
    }
}

/// Offline provider answering from an in-memory table. It derives lookup
/// keys the same way as the live provider it stands in for.
pub struct FixtureProvider {
    emulates: ProviderKind,
    entries: HashMap<String, Option<Metadata>>,
    calls: AtomicUsize,
}

impl FixtureProvider {
    pub fn new(emulates: ProviderKind, entries: HashMap<String, Option<Metadata>>) -> Self {
        FixtureProvider { emulates, entries, calls: AtomicUsize::new(0) }
    }

    /// Reads `{"key": {"title": ..., "description": ...} | null}` from `path`.
    pub fn from_file(emulates: ProviderKind, path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let entries = serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(emulates, entries))
    }

    /// Loads `tmdb.json`, `transcripts.json` and `tiktok.json` from `dir`;
    /// platforms whose file is absent get no provider.
    pub fn set_from_dir(dir: &Path) -> std::io::Result<ProviderSet> {
        let load = |name: &str, kind| -> std::io::Result<Option<Arc<dyn MetadataProvider>>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            Ok(Some(Arc::new(Self::from_file(kind, &path)?)))
        };
        Ok(ProviderSet {
            youtube: load("transcripts.json", ProviderKind::TranscriptApi)?,
            netflix: load("tmdb.json", ProviderKind::Tmdb)?,
            tiktok: load("tiktok.json", ProviderKind::UrlResolver)?,
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn table_key(&self, event: &WatchEvent) -> Option<String> {
        match self.emulates {
            ProviderKind::Tmdb => Some(tmdb_query(event.raw_title.as_deref()?)),
            ProviderKind::TranscriptApi => youtube_video_id(event.raw_url.as_deref()?),
            ProviderKind::UrlResolver => event.raw_url.clone(),
            ProviderKind::Fixture => event.raw_url.clone().or_else(|| event.raw_title.clone()),
        }
    }
}

impl MetadataProvider for FixtureProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Fixture
    }

    fn source(&self) -> crate::model::EnrichmentSource {
        self.emulates.source()
    }

    fn lookup_key(&self, event: &WatchEvent) -> Option<String> {
        Some(format!("{}:{}", self.emulates.as_str(), self.table_key(event)?))
    }

    fn lookup(&self, event: &WatchEvent) -> Result<Option<Metadata>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.table_key(event).and_then(|k| self.entries.get(&k).cloned().flatten()))
    }
}
