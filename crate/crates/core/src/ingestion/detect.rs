use serde_json::Value;

use super::{ExportFile, IngestError};
use crate::model::Platform;

/// Sniffs each file's structure and returns the single platform they share.
/// Files that match no signature are ignored as long as another file does.
pub fn detect_platform(files: &[ExportFile]) -> Result<Platform, IngestError> {
    if files.is_empty() {
        return Err(IngestError::EmptyBundle);
    }
    let mut found: Vec<Platform> = files.iter().filter_map(sniff).collect();
    found.sort();
    found.dedup();
    match found.as_slice() {
        [] => Err(IngestError::UnknownExport),
        [one] => Ok(*one),
        many => Err(IngestError::AmbiguousExport(many.to_vec())),
    }
}

fn sniff(file: &ExportFile) -> Option<Platform> {
    let text = String::from_utf8_lossy(&file.bytes);
    let text = super::strip_bom(text.trim_start());
    match text.chars().next() {
        Some('[') | Some('{') => sniff_json(text),
        Some('<') => {
            let is_takeout = text.contains("outer-cell") && text.contains("youtube.com");
            is_takeout.then_some(Platform::Youtube)
        }
        _ => sniff_csv(text),
    }
}

fn sniff_json(text: &str) -> Option<Platform> {
    let root: Value = serde_json::from_str(text).ok()?;
    match &root {
        Value::Array(records) => {
            let takeout = records.iter().filter_map(Value::as_object).any(|r| {
                r.contains_key("titleUrl")
                    || r.get("header").and_then(Value::as_str).is_some_and(|h| h.contains("YouTube"))
                    || (r.contains_key("title") && r.contains_key("time"))
            });
            takeout.then_some(Platform::Youtube)
        }
        Value::Object(_) => (!super::tiktok::find_video_lists(&root).is_empty()).then_some(Platform::Tiktok),
        _ => None,
    }
}

fn sniff_csv(text: &str) -> Option<Platform> {
    let header = text.lines().next()?.to_ascii_lowercase();
    let cols: Vec<&str> = header.split(',').map(|c| c.trim().trim_matches('"')).collect();
    let has = |name: &str| cols.contains(&name);
    (has("title") && (has("date") || has("start time"))).then_some(Platform::Netflix)
}
