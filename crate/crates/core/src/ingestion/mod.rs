//! Parsers for the official viewing-history exports of YouTube (Google
//! Takeout), Netflix and TikTok.
//!
//! Row-level problems never abort a file: the offending record is skipped and
//! counted in the [`ParseReport`]. Only a file that cannot be read as the
//! expected format at all yields [`IngestError::MalformedExport`].

mod detect;
mod html;
mod netflix;
mod tiktok;
mod youtube;

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::config::{DateOrder, IngestConfig};
use crate::model::{EventError, Platform, WatchEvent};

pub use detect::detect_platform;
pub use netflix::parse_netflix;
pub use tiktok::parse_tiktok;
pub use youtube::parse_youtube;

/// One uploaded file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl ExportFile {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        ExportFile { name: name.into(), bytes: bytes.into() }
    }
}

/// The files of one platform's export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportBundle {
    pub platform: Platform,
    pub files: Vec<ExportFile>,
}

impl ExportBundle {
    pub fn new(platform: Platform, files: Vec<ExportFile>) -> Self {
        ExportBundle { platform, files }
    }

    pub fn validate(&self, max_upload_bytes: u64) -> Result<(), IngestError> {
        if self.files.is_empty() {
            return Err(IngestError::EmptyBundle);
        }
        for f in &self.files {
            let size = f.bytes.len() as u64;
            if size > max_upload_bytes {
                return Err(IngestError::FileTooLarge { file: f.name.clone(), size, limit: max_upload_bytes });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    AdRecord,
    MissingTitleAndUrl,
    MissingTitle,
    MissingUrl,
    BadDate,
    FutureTimestamp,
    Duplicate,
    MalformedRecord,
    SupplementalVideo,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub events_parsed: usize,
    pub rows_skipped: usize,
    pub skip_reasons: BTreeMap<SkipReason, usize>,
    pub date_range: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

impl ParseReport {
    pub fn candidates(&self) -> usize {
        self.events_parsed + self.rows_skipped
    }

    pub fn skipped_for(&self, reason: SkipReason) -> usize {
        self.skip_reasons.get(&reason).copied().unwrap_or(0)
    }

    /// `rows_skipped` equals the sum over reason codes.
    pub fn is_consistent(&self) -> bool {
        self.skip_reasons.values().sum::<usize>() == self.rows_skipped
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed export `{file}`: {detail}")]
    MalformedExport { file: String, detail: String },
    #[error("export contains no watch events")]
    EmptyExport,
    #[error("no files supplied")]
    EmptyBundle,
    #[error("file `{file}` is {size} bytes, limit is {limit}")]
    FileTooLarge { file: String, size: u64, limit: u64 },
    #[error("files match more than one platform: {0:?}")]
    AmbiguousExport(Vec<Platform>),
    #[error("files match no known export format")]
    UnknownExport,
    #[error("bundle is for {actual}, parser expects {expected}")]
    WrongPlatform { expected: Platform, actual: Platform },
    #[error("unknown time zone `{0}`")]
    BadTimezone(String),
}

impl IngestError {
    pub(crate) fn malformed(file: &str, detail: impl Into<String>) -> Self {
        IngestError::MalformedExport { file: file.to_string(), detail: detail.into() }
    }
}

/// Resolved parser settings for one dataset.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub include_ads: bool,
    pub timezone: Tz,
    pub date_order: DateOrder,
    /// Ingestion instant; later timestamps are rejected.
    pub now: DateTime<Utc>,
    pub max_upload_bytes: u64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            include_ads: true,
            timezone: Tz::UTC,
            date_order: DateOrder::DayFirst,
            now: Utc::now(),
            max_upload_bytes: IngestConfig::default().max_upload_bytes,
        }
    }
}

impl ParseOptions {
    pub fn from_config(cfg: &IngestConfig) -> Result<Self, IngestError> {
        Ok(ParseOptions {
            include_ads: cfg.include_ads,
            timezone: parse_timezone(&cfg.timezone)?,
            date_order: cfg.date_order,
            now: Utc::now(),
            max_upload_bytes: cfg.max_upload_bytes,
        })
    }
}

pub fn parse_timezone(name: &str) -> Result<Tz, IngestError> {
    Tz::from_str(name.trim()).map_err(|_| IngestError::BadTimezone(name.to_string()))
}

/// Parses a bundle with the parser for its platform.
pub fn parse_bundle(
    bundle: &ExportBundle,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
    match bundle.platform {
        Platform::Youtube => parse_youtube(bundle, opts),
        Platform::Netflix => parse_netflix(bundle, opts),
        Platform::Tiktok => parse_tiktok(bundle, opts),
    }
}

/// Detects the platform, then parses.
pub fn parse_auto(
    files: Vec<ExportFile>,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
    let platform = detect_platform(&files)?;
    parse_bundle(&ExportBundle::new(platform, files), opts)
}

fn check_bundle(bundle: &ExportBundle, expected: Platform, opts: &ParseOptions) -> Result<(), IngestError> {
    if bundle.platform != expected {
        return Err(IngestError::WrongPlatform { expected, actual: bundle.platform });
    }
    bundle.validate(opts.max_upload_bytes)
}

/// Accumulates events across a bundle, deduplicating by id and keeping the
/// report's accounting in step.
pub(crate) struct Collector<'a> {
    platform: Platform,
    opts: &'a ParseOptions,
    events: Vec<WatchEvent>,
    seen: HashSet<crate::model::EventId>,
    report: ParseReport,
}

impl<'a> Collector<'a> {
    pub(crate) fn new(platform: Platform, opts: &'a ParseOptions) -> Self {
        Collector { platform, opts, events: Vec::new(), seen: HashSet::new(), report: ParseReport::default() }
    }

    pub(crate) fn skip(&mut self, reason: SkipReason) {
        self.report.rows_skipped += 1;
        *self.report.skip_reasons.entry(reason).or_insert(0) += 1;
    }

    pub(crate) fn push(&mut self, title: Option<String>, url: Option<String>, watched_at: DateTime<Utc>) {
        match WatchEvent::new(self.platform, title, url, watched_at, self.opts.now) {
            Ok(event) => {
                if self.seen.insert(event.id.clone()) {
                    self.report.events_parsed += 1;
                    self.events.push(event);
                } else {
                    self.skip(SkipReason::Duplicate);
                }
            }
            Err(EventError::MissingContentRef) => self.skip(SkipReason::MissingTitleAndUrl),
            Err(EventError::FutureTimestamp(_)) => self.skip(SkipReason::FutureTimestamp),
        }
    }

    pub(crate) fn finish(mut self) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
        if self.events.is_empty() {
            return Err(IngestError::EmptyExport);
        }
        self.events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        let first = self.events.first().map(|e| e.watched_at);
        let last = self.events.last().map(|e| e.watched_at);
        self.report.date_range = first.zip(last);
        Ok((self.events, self.report))
    }
}

/// Interprets a wall-clock time in `tz`. Nonexistent local times (DST gaps)
/// yield `None`; ambiguous ones take the earlier instant.
pub(crate) fn local_to_utc(naive: NaiveDateTime, tz: Tz) -> Option<DateTime<Utc>> {
    tz.from_local_datetime(&naive).earliest().map(|t| t.with_timezone(&Utc))
}

pub(crate) fn strip_bom(s: &str) -> &str {
    s.strip_prefix('\u{feff}').unwrap_or(s)
}
