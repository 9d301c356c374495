//! Tolerant extractor for the HTML flavour of Takeout watch history.
//!
//! The page is a flat list of `outer-cell` blocks. Each block's first
//! `body-1` content cell holds `Watched <a href=url>title</a><br>channel<br>timestamp`.
//! Only the anchor and the trailing timestamp are relied upon.

use std::sync::LazyLock;

use chrono::{DateTime, FixedOffset, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use regex::Regex;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HtmlRecord {
    Entry { title: Option<String>, url: Option<String>, time: Option<DateTime<Utc>>, is_ad: bool },
    Malformed,
}

static BODY_CELL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?s)<div class="content-cell[^"]*mdl-typography--body-1"[^>]*>(.*?)</div>"#).unwrap()
});
static ANCHOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?s)<a\s+href="([^"]*)"[^>]*>(.*?)</a>"#).unwrap());
static BR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<br\s*/?>").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<[^>]*>").unwrap());
static OFFSET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:GMT|UTC)([+-])(\d{1,2})(?::?(\d{2}))?$").unwrap());

pub(crate) fn parse_takeout_html(text: &str, tz: Tz) -> Vec<HtmlRecord> {
    let mut chunks = text.split("<div class=\"outer-cell");
    chunks.next(); // page header
    chunks.map(|chunk| parse_cell(chunk, tz)).collect()
}

fn parse_cell(chunk: &str, tz: Tz) -> HtmlRecord {
    let Some(body) = BODY_CELL.captures(chunk).and_then(|c| c.get(1)) else {
        return HtmlRecord::Malformed;
    };
    let body = body.as_str();
    let is_ad = chunk.contains("From Google Ads");

    let (title, url) = match ANCHOR.captures(body) {
        Some(c) => {
            let href = decode_entities(c.get(1).map_or("", |m| m.as_str())).trim().to_string();
            let text = clean_text(c.get(2).map_or("", |m| m.as_str()));
            (Some(text).filter(|t| !t.is_empty()), Some(href).filter(|h| !h.is_empty()))
        }
        None => {
            // e.g. "Watched a video that has been removed<br>timestamp"
            let first = BR.split(body).next().unwrap_or("");
            (Some(clean_text(first)).filter(|t| !t.is_empty()), None)
        }
    };

    let segments: Vec<String> =
        BR.split(body).map(clean_text).filter(|s| !s.is_empty()).collect();
    let time = segments.last().and_then(|s| parse_takeout_time(s, tz));
    HtmlRecord::Entry { title, url, time, is_ad }
}

fn clean_text(fragment: &str) -> String {
    let stripped = TAG.replace_all(fragment, "");
    let decoded = decode_entities(&stripped);
    decoded
        .replace(['\u{a0}', '\u{202f}', '\u{2003}'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let end = tail.char_indices().take(12).find(|&(_, c)| c == ';').map(|(i, _)| i);
        let decoded = end.and_then(|end| {
            let name = &tail[1..end];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                "emsp" => Some('\u{2003}'),
                _ => name
                    .strip_prefix("#x")
                    .or_else(|| name.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| name.strip_prefix('#').and_then(|d| d.parse::<u32>().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, end))
        });
        match decoded {
            Some((c, end)) => {
                out.push(c);
                rest = &tail[end + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

const LOCAL_FORMATS: &[&str] = &[
    "%b %d, %Y, %I:%M:%S %p",
    "%b %d, %Y, %H:%M:%S",
    "%d %b %Y, %H:%M:%S",
    "%d %b %Y, %I:%M:%S %p",
    "%Y-%m-%d %H:%M:%S",
];

/// Parses strings like `Mar 1, 2024, 10:00:00 AM UTC` or
/// `1 Mar 2024, 10:00:00 CET`. Unknown zone names fall back to `tz`.
pub(crate) fn parse_takeout_time(s: &str, tz: Tz) -> Option<DateTime<Utc>> {
    let s = s.trim();
    let (body, zone) = match s.rsplit_once(' ') {
        Some((body, last)) if is_zone_token(last) => (body, Some(last)),
        _ => (s, None),
    };
    let naive = LOCAL_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(body, f).ok())?;
    match zone.and_then(zone_offset) {
        Some(offset) => offset.from_local_datetime(&naive).single().map(|t| t.with_timezone(&Utc)),
        None => super::local_to_utc(naive, tz),
    }
}

fn is_zone_token(tok: &str) -> bool {
    !tok.is_empty()
        && !tok.eq_ignore_ascii_case("am")
        && !tok.eq_ignore_ascii_case("pm")
        && tok.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && tok.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | ':'))
}

fn zone_offset(tok: &str) -> Option<FixedOffset> {
    let hours = match tok {
        "UTC" | "GMT" | "Z" => 0,
        "BST" | "CET" | "WAT" => 1,
        "CEST" | "EET" | "SAST" => 2,
        "EEST" | "MSK" => 3,
        "IST" => return FixedOffset::east_opt(5 * 3600 + 1800),
        "JST" | "KST" => 9,
        "AEST" => 10,
        "AEDT" => 11,
        "NZST" => 12,
        "NZDT" => 13,
        "HST" => -10,
        "AKST" => -9,
        "AKDT" | "PST" => -8,
        "PDT" | "MST" => -7,
        "MDT" | "CST" => -6,
        "CDT" | "EST" => -5,
        "EDT" | "AST" => -4,
        "ADT" => -3,
        _ => {
            let c = OFFSET.captures(tok)?;
            let sign = if &c[1] == "-" { -1 } else { 1 };
            let h: i32 = c[2].parse().ok()?;
            let m: i32 = c.get(3).map_or(Some(0), |m| m.as_str().parse().ok())?;
            return FixedOffset::east_opt(sign * (h * 3600 + m * 60));
        }
    };
    FixedOffset::east_opt(hours * 3600)
}
