//! Domain types shared by every pipeline stage.
//!
//! All types are plain immutable values with a canonical JSON encoding:
//! snake_case field names and RFC 3339 timestamps.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Source platform of a viewing record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Youtube,
    Netflix,
    Tiktok,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Youtube, Platform::Netflix, Platform::Tiktok];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Youtube => "youtube",
            Platform::Netflix => "netflix",
            Platform::Tiktok => "tiktok",
        }
    }

    /// Human-facing name, used in placeholder titles.
    pub fn display_name(self) -> &'static str {
        match self {
            Platform::Youtube => "YouTube",
            Platform::Netflix => "Netflix",
            Platform::Tiktok => "TikTok",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown platform `{0}`")]
pub struct UnknownPlatform(pub String);

impl FromStr for Platform {
    type Err = UnknownPlatform;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "youtube" => Ok(Platform::Youtube),
            "netflix" => Ok(Platform::Netflix),
            "tiktok" => Ok(Platform::Tiktok),
            other => Err(UnknownPlatform(other.to_string())),
        }
    }
}

/// Stable 128-bit identifier of a watch event, rendered as 32 lowercase hex chars.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(String);

impl EventId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an existing id string without validation. Used when reading
    /// persisted artifacts.
    pub fn from_raw(raw: impl Into<String>) -> Self {
        EventId(raw.into())
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Deterministic event id: the first 16 bytes of SHA-256 over
/// `platform \x1f title_or_url \x1f watched_at(RFC 3339, seconds)`.
pub fn event_id(platform: Platform, title_or_url: &str, watched_at: DateTime<Utc>) -> EventId {
    let mut hasher = Sha256::new();
    hasher.update(platform.as_str().as_bytes());
    hasher.update([0x1f]);
    hasher.update(title_or_url.as_bytes());
    hasher.update([0x1f]);
    hasher.update(rfc3339_seconds(watched_at).as_bytes());
    let digest = hasher.finalize();
    EventId(hex::encode(&digest[..16]))
}

pub(crate) fn rfc3339_seconds(t: DateTime<Utc>) -> String {
    t.trunc_subsecs(0).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("event has neither a title nor a url")]
    MissingContentRef,
    #[error("timestamp {0} lies in the future")]
    FutureTimestamp(DateTime<Utc>),
}

/// One normalized viewing record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub id: EventId,
    pub platform: Platform,
    pub raw_title: Option<String>,
    pub raw_url: Option<String>,
    pub watched_at: DateTime<Utc>,
}

impl WatchEvent {
    /// Builds a validated event. Blank strings count as absent; the timestamp
    /// is truncated to whole seconds and must not be later than `now`.
    pub fn new(
        platform: Platform,
        raw_title: Option<String>,
        raw_url: Option<String>,
        watched_at: DateTime<Utc>,
        now: DateTime<Utc>,
    ) -> Result<Self, EventError> {
        let raw_title = non_blank(raw_title);
        let raw_url = non_blank(raw_url);
        let watched_at = watched_at.trunc_subsecs(0);
        if watched_at > now {
            return Err(EventError::FutureTimestamp(watched_at));
        }
        // The url is the more specific reference, so it wins when both exist.
        let key = match (&raw_url, &raw_title) {
            (Some(url), _) => url.as_str(),
            (None, Some(title)) => title.as_str(),
            (None, None) => return Err(EventError::MissingContentRef),
        };
        let id = event_id(platform, key, watched_at);
        Ok(WatchEvent { id, platform, raw_title, raw_url, watched_at })
    }

    /// Ordering key used wherever output order must be deterministic.
    pub fn order_key(&self) -> (DateTime<Utc>, &EventId) {
        (self.watched_at, &self.id)
    }
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentSource {
    Export,
    UrlResolution,
    TranscriptApi,
    Tmdb,
    None,
}

/// A watch event with title and description filled from external metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedItem {
    pub event: WatchEvent,
    pub title: String,
    pub description: String,
    pub enrichment_source: EnrichmentSource,
}

impl EnrichedItem {
    pub fn is_valid(&self) -> bool {
        !self.title.trim().is_empty()
            && (!self.description.is_empty() || self.enrichment_source == EnrichmentSource::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmonizerKind {
    Provider,
    RuleFallback,
}

/// Enriched item plus its short content-only summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonizedItem {
    pub item: EnrichedItem,
    pub summary: String,
    pub harmonizer: HarmonizerKind,
}

impl HarmonizedItem {
    pub fn id(&self) -> &EventId {
        &self.item.event.id
    }
}

/// A unit-normalized semantic vector for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub item_id: EventId,
    pub vector: Vec<f32>,
    pub norm: f64,
}

impl EmbeddedItem {
    /// Wraps a vector and records its Euclidean norm (computed in f64).
    pub fn new(item_id: EventId, vector: Vec<f32>) -> Self {
        let norm = l2_norm(&vector);
        EmbeddedItem { item_id, vector, norm }
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cluster identifier. Major topics and subtopics share one id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub u32);

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One point of a 2D layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub item_id: EventId,
    pub x: f64,
    pub y: f64,
    pub platform: Platform,
    pub watched_at: DateTime<Utc>,
    pub topic_id: Option<TopicId>,
}

/// Frequency-ranked cluster label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicLabel {
    pub topic_id: TopicId,
    pub label: String,
    pub frequency: usize,
    pub centroid: (f64, f64),
    pub min_zoom: u32,
}
