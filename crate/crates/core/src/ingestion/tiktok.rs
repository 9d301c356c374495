use chrono::NaiveDateTime;
use serde_json::Value;

use super::{check_bundle, Collector, ExportBundle, IngestError, ParseOptions, ParseReport, SkipReason};
use crate::model::{Platform, WatchEvent};

/// Section names under which TikTok exports have stored the watch list.
const HISTORY_SECTIONS: &[&str] = &["video browsing history", "watch history"];

/// Parses TikTok's `user_data` JSON export. Only the watch-history
/// `VideoList` is read; profile, messages and other sections are ignored.
pub fn parse_tiktok(
    bundle: &ExportBundle,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
    check_bundle(bundle, Platform::Tiktok, opts)?;
    let mut out = Collector::new(Platform::Tiktok, opts);
    for file in &bundle.files {
        let text = String::from_utf8_lossy(&file.bytes);
        let root: Value = serde_json::from_str(super::strip_bom(&text))
            .map_err(|e| IngestError::malformed(&file.name, format!("invalid JSON: {e}")))?;
        let lists = find_video_lists(&root);
        if lists.is_empty() {
            return Err(IngestError::malformed(&file.name, "no video browsing history section"));
        }
        for record in lists.into_iter().flatten() {
            let Some(obj) = record.as_object() else {
                out.skip(SkipReason::MalformedRecord);
                continue;
            };
            let link = ["Link", "link", "VideoLink"]
                .iter()
                .find_map(|k| obj.get(*k).and_then(Value::as_str))
                .map(str::trim)
                .filter(|l| !l.is_empty());
            let Some(link) = link else {
                out.skip(SkipReason::MissingUrl);
                continue;
            };
            match obj.get("Date").and_then(Value::as_str).and_then(parse_tiktok_date) {
                Some(t) => out.push(None, Some(link.to_string()), t),
                None => out.skip(SkipReason::BadDate),
            }
        }
    }
    out.finish()
}

/// TikTok writes UTC wall-clock times such as `2025-02-03 14:05:00`.
fn parse_tiktok_date(s: &str) -> Option<chrono::DateTime<chrono::Utc>> {
    let s = s.trim().trim_end_matches(" UTC");
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()
        .map(|n| n.and_utc())
}

/// Every `VideoList` array found under a watch-history section, or at the
/// top level of a trimmed-down export.
pub(crate) fn find_video_lists(root: &Value) -> Vec<&Vec<Value>> {
    let mut found = Vec::new();
    if let Some(list) = root.get("VideoList").and_then(Value::as_array) {
        found.push(list);
    }
    walk(root, false, 0, &mut found);
    found
}

fn walk<'a>(v: &'a Value, in_history: bool, depth: usize, found: &mut Vec<&'a Vec<Value>>) {
    if depth > 16 {
        return;
    }
    if let Value::Object(map) = v {
        for (key, child) in map {
            let is_history = HISTORY_SECTIONS.iter().any(|s| key.eq_ignore_ascii_case(s));
            if in_history && key == "VideoList" {
                if let Some(list) = child.as_array() {
                    found.push(list);
                }
            } else {
                walk(child, in_history || is_history, depth + 1, found);
            }
        }
    }
}
