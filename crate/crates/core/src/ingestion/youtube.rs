use chrono::{DateTime, Utc};
use serde_json::Value;

use super::html::{parse_takeout_html, HtmlRecord};
use super::{check_bundle, Collector, ExportBundle, IngestError, ParseOptions, ParseReport, SkipReason};
use crate::model::{Platform, WatchEvent};

const AD_MARKER: &str = "From Google Ads";

/// Parses Google Takeout watch history, JSON or HTML variant.
pub fn parse_youtube(
    bundle: &ExportBundle,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
    check_bundle(bundle, Platform::Youtube, opts)?;
    let mut out = Collector::new(Platform::Youtube, opts);
    for file in &bundle.files {
        let text = String::from_utf8_lossy(&file.bytes);
        let text = super::strip_bom(text.trim_start());
        if text.starts_with('[') {
            let records: Vec<Value> = serde_json::from_str(text)
                .map_err(|e| IngestError::malformed(&file.name, format!("not a JSON array: {e}")))?;
            for record in &records {
                json_record(record, opts, &mut out);
            }
        } else if looks_like_html(text) {
            for record in parse_takeout_html(text, opts.timezone) {
                html_record(record, opts, &mut out);
            }
        } else {
            return Err(IngestError::malformed(&file.name, "neither Takeout JSON nor HTML"));
        }
    }
    out.finish()
}

fn looks_like_html(text: &str) -> bool {
    let head: String = text.chars().take(512).collect::<String>().to_ascii_lowercase();
    head.starts_with("<!doctype html") || head.starts_with("<html") || text.contains("outer-cell")
}

fn json_record(record: &Value, opts: &ParseOptions, out: &mut Collector<'_>) {
    let Some(obj) = record.as_object() else {
        out.skip(SkipReason::MalformedRecord);
        return;
    };
    let is_ad = obj
        .get("details")
        .and_then(Value::as_array)
        .is_some_and(|ds| ds.iter().any(|d| d.get("name").and_then(Value::as_str) == Some(AD_MARKER)));
    if is_ad && !opts.include_ads {
        out.skip(SkipReason::AdRecord);
        return;
    }
    let title = obj.get("title").and_then(Value::as_str).map(strip_watched_prefix);
    let url = obj.get("titleUrl").and_then(Value::as_str).map(str::to_string);
    if title.as_deref().is_none_or(|t| t.trim().is_empty()) && url.as_deref().is_none_or(|u| u.trim().is_empty()) {
        out.skip(SkipReason::MissingTitleAndUrl);
        return;
    }
    let Some(time) = obj.get("time").and_then(Value::as_str).and_then(parse_rfc3339) else {
        out.skip(SkipReason::BadDate);
        return;
    };
    out.push(title, url, time);
}

fn html_record(record: HtmlRecord, opts: &ParseOptions, out: &mut Collector<'_>) {
    match record {
        HtmlRecord::Malformed => out.skip(SkipReason::MalformedRecord),
        HtmlRecord::Entry { title, url, time, is_ad } => {
            if is_ad && !opts.include_ads {
                out.skip(SkipReason::AdRecord);
                return;
            }
            let title = title.map(|t| strip_watched_prefix(&t));
            if title.as_deref().is_none_or(str::is_empty) && url.is_none() {
                out.skip(SkipReason::MissingTitleAndUrl);
                return;
            }
            match time {
                Some(t) => out.push(title, url, t),
                None => out.skip(SkipReason::BadDate),
            }
        }
    }
}

fn parse_rfc3339(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim()).ok().map(|t| t.with_timezone(&Utc))
}

/// Takeout prefixes every title with "Watched ".
fn strip_watched_prefix(title: &str) -> String {
    let t = title.trim();
    for prefix in ["Watched ", "Watched\u{a0}"] {
        if let Some(rest) = t.strip_prefix(prefix) {
            return rest.trim().to_string();
        }
    }
    t.to_string()
}
