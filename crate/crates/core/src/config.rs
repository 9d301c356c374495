//! Dataset- and service-level configuration.
//!
//! Loaded from TOML; every field has a default so an empty file is valid.
//! API keys are never read from the file, only from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::layout::LayoutConfig;

/// Order of day and month in slash-separated dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateOrder {
    #[default]
    DayFirst,
    MonthFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub max_upload_bytes: u64,
    pub include_ads: bool,
    /// IANA zone used for exports that carry local wall-clock times.
    pub timezone: String,
    pub date_order: DateOrder,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            max_upload_bytes: 256 * 1024 * 1024,
            include_ads: true,
            timezone: "UTC".to_string(),
            date_order: DateOrder::DayFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentMode {
    /// Canned responses from `fixture_dir`; no network.
    #[default]
    Fixture,
    Live,
    /// No lookups at all; every item falls back to its export fields.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichmentConfig {
    pub mode: EnrichmentMode,
    pub fixture_dir: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub transcript_max_chars: usize,
    pub concurrency: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub tmdb_url_template: String,
    pub transcript_url_template: String,
    pub oembed_url_template: String,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        EnrichmentConfig {
            mode: EnrichmentMode::Fixture,
            fixture_dir: None,
            cache_path: None,
            transcript_max_chars: 2000,
            concurrency: 4,
            max_retries: 3,
            backoff_base_ms: 250,
            tmdb_url_template: "https://api.themoviedb.org/3/search/multi?query={query}&api_key={key}"
                .to_string(),
            transcript_url_template: "http://localhost:8081/transcripts/{video_id}".to_string(),
            oembed_url_template: "https://www.tiktok.com/oembed?url={url}".to_string(),
        }
    }
}

/// Remote text-model endpoint (chat-completions style JSON API).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteModelConfig {
    pub endpoint: Option<String>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizeConfig {
    /// When false, items are embedded from their raw title and description.
    pub enabled: bool,
    pub max_summary_words: usize,
    pub provider: RemoteModelConfig,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        HarmonizeConfig { enabled: true, max_summary_words: 40, provider: RemoteModelConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    LocalDeterministic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub endpoint: Option<String>,
    pub model: String,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            kind: EmbedderKind::LocalDeterministic,
            dimension: 1536,
            seed: 0,
            batch_size: 256,
            endpoint: None,
            model: "text-embedding-ada-002".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub min_cluster_size: usize,
    /// Points whose core distance exceeds this (layout units) are noise.
    pub max_core_distance: f64,
    pub zoom_levels: u32,
    pub labeler: RemoteModelConfig,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            min_cluster_size: 5,
            max_core_distance: 1.5,
            zoom_levels: 5,
            labeler: RemoteModelConfig::default(),
        }
    }
}

/// Everything needed to run the pipeline for one dataset. A snapshot is
/// stored in the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DatasetConfig {
    pub ingest: IngestConfig,
    pub enrichment: EnrichmentConfig,
    pub harmonize: HarmonizeConfig,
    pub embed: EmbedConfig,
    pub layout: LayoutConfig,
    pub topics: TopicsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    pub workers: usize,
    /// Zoom levels exposed by the map endpoint (`zoom ∈ [0, levels-1]`).
    pub map_levels: u32,
    pub default_max_points: usize,
    pub webhook_url: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".to_string(),
            data_dir: PathBuf::from("mirror-data"),
            workers: 2,
            map_levels: 6,
            default_max_points: 5000,
            webhook_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MirrorConfig {
    pub server: ServerConfig,
    pub dataset: DatasetConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {var} has invalid value `{value}`")]
    Env { var: &'static str, value: String },
}

impl MirrorConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Applies `MIRROR_BIND`, `MIRROR_DATA_DIR`, `MIRROR_WORKERS`,
    /// `MIRROR_MAX_UPLOAD_BYTES` and `MIRROR_WEBHOOK_URL` as read by `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn number<T: std::str::FromStr>(var: &'static str, value: String) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env { var, value })
        }
        if let Some(v) = var("MIRROR_BIND") {
            self.server.bind = v;
        }
        if let Some(v) = var("MIRROR_DATA_DIR") {
            self.server.data_dir = PathBuf::from(v);
        }
        if let Some(v) = var("MIRROR_WORKERS") {
            self.server.workers = number("MIRROR_WORKERS", v)?;
        }
        if let Some(v) = var("MIRROR_MAX_UPLOAD_BYTES") {
            self.dataset.ingest.max_upload_bytes = number("MIRROR_MAX_UPLOAD_BYTES", v)?;
        }
        if let Some(v) = var("MIRROR_WEBHOOK_URL") {
            self.server.webhook_url = Some(v).filter(|u| !u.is_empty());
        }
        Ok(())
    }
}

/// Secrets pulled from the environment.
#[derive(Debug, Clone, Default)]
pub struct ApiKeys {
    pub tmdb: Option<String>,
    pub transcripts: Option<String>,
    pub embed: Option<String>,
    pub llm: Option<String>,
}

impl ApiKeys {
    pub fn from_env() -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        ApiKeys {
            tmdb: var("MIRROR_TMDB_KEY"),
            transcripts: var("MIRROR_TRANSCRIPT_KEY"),
            embed: var("MIRROR_EMBED_KEY"),
            llm: var("MIRROR_LLM_KEY"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = MirrorConfig::from_toml("").unwrap();
        assert_eq!(cfg, MirrorConfig::default());
        assert_eq!(cfg.dataset.embed.dimension, 1536);
        assert_eq!(cfg.dataset.harmonize.max_summary_words, 40);
        assert_eq!(cfg.dataset.topics.min_cluster_size, 5);
        assert!(cfg.dataset.ingest.include_ads);
    }

    #[test]
    fn partial_override() {
        let cfg = MirrorConfig::from_toml(
            "[dataset.ingest]\ndate_order = \"month_first\"\ntimezone = \"Europe/Berlin\"\n[dataset.embed]\ndimension = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.ingest.date_order, DateOrder::MonthFirst);
        assert_eq!(cfg.dataset.ingest.timezone, "Europe/Berlin");
        assert_eq!(cfg.dataset.embed.dimension, 64);
        assert_eq!(cfg.dataset.embed.batch_size, 256);
    }

    #[test]
    fn env_overrides() {
        let mut cfg = MirrorConfig::default();
        let env = |k: &str| match k {
            "MIRROR_WORKERS" => Some("4".to_string()),
            "MIRROR_DATA_DIR" => Some("/tmp/m".to_string()),
            _ => None,
        };
        cfg.apply_env(env).unwrap();
        assert_eq!(cfg.server.workers, 4);
        assert_eq!(cfg.server.data_dir, PathBuf::from("/tmp/m"));
        let bad = |k: &str| (k == "MIRROR_MAX_UPLOAD_BYTES").then(|| "lots".to_string());
        assert!(matches!(cfg.apply_env(bad), Err(ConfigError::Env { var: "MIRROR_MAX_UPLOAD_BYTES", .. })));
    }
}
