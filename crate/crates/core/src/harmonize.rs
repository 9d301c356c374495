//! Rewrites per-platform descriptions into short content-only summaries.
//!
//! The rule-based fallback is deterministic and is what runs offline. A
//! remote text model can be plugged in through [`Harmonizer`]; its output is
//! passed through the same cleaner, and any failure drops back to the rules.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};

use regex::Regex;

use crate::llm::{render_prompt, ChatModel};
use crate::model::{EnrichedItem, HarmonizedItem, HarmonizerKind, Platform};

pub const PROMPT_TEMPLATE: &str = include_str!("../assets/harmonize_prompt.v1.txt");
pub const PROMPT_VERSION: &str = "harmonize_prompt.v1";

pub const UNTITLED: &str = "untitled video";

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b[a-z][a-z0-9+.\-]*://\S*|\bwww\.\S+").unwrap());
static TIMESTAMP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d{1,2}:\d{2}(?::\d{2})?\b").unwrap());
static LEADING_TIMESTAMP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\s\-*•(\[]*\d{1,2}:\d{2}(?::\d{2})?\b").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|\s)#\S").unwrap());
static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?…]+(?:\s+|$)").unwrap());

const PROMO_MARKERS: [&str; 8] = [
    "subscribe",
    "sponsored by",
    "use code",
    "affiliate",
    "link in bio",
    "follow me",
    "merch",
    "discount",
];

/// True for text that breaks the summary contract.
pub fn has_forbidden_tokens(s: &str) -> bool {
    URL.is_match(s) || HASHTAG.is_match(s) || TIMESTAMP.is_match(s)
}

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B00..=0x2BFF | 0x2300..=0x23FF
        | 0xFE00..=0xFE0F | 0x200D | 0x20E3 | 0xE0020..=0xE007F)
}

fn strip_emoji(s: &str) -> String {
    s.chars().map(|c| if is_emoji(c) { ' ' } else { c }).collect()
}

fn strip_mentions_and_tags(s: &str) -> String {
    s.split_whitespace().filter(|t| !t.starts_with('#') && !t.starts_with('@')).collect::<Vec<_>>().join(" ")
}

fn strip_timestamps(s: &str) -> String {
    let mut out = s.to_string();
    while TIMESTAMP.is_match(&out) {
        out = TIMESTAMP.replace_all(&out, " ").into_owned();
    }
    out
}

fn trim_terminal(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_whitespace() || ".!?,;:…-–—|".contains(c)).trim_start()
}

/// Cleans one line. Returns `None` when the line should be dropped entirely.
fn clean_line(line: &str, promo_filter: bool) -> Option<String> {
    let line = strip_emoji(line);
    if LEADING_TIMESTAMP.is_match(&line) {
        return None;
    }
    let had_url = URL.is_match(&line);
    let without_url = URL.replace_all(&line, " ");
    let s = strip_mentions_and_tags(&strip_timestamps(&without_url));
    let s = s.trim();
    if had_url && (s.is_empty() || s.ends_with(':')) {
        return None;
    }
    if promo_filter {
        let lower = s.to_lowercase();
        if PROMO_MARKERS.iter().any(|m| lower.contains(m)) {
            return None;
        }
    }
    let s = trim_terminal(s);
    (!s.is_empty()).then(|| s.to_string())
}

/// Removes links, hashtags, mentions, emoji and timestamps, drops link-label
/// and chapter lines, and collapses whitespace. Trailing punctuation is
/// trimmed from every line.
pub fn clean(text: &str) -> String {
    clean_inner(text, false)
}

fn clean_inner(text: &str, promo_filter: bool) -> String {
    let lines: Vec<String> = text.lines().filter_map(|l| clean_line(l, promo_filter)).collect();
    let joined = lines.join(". ");
    let collapsed = joined.split_whitespace().collect::<Vec<_>>().join(" ");
    trim_terminal(&collapsed).to_string()
}

fn truncate_words(s: &str, max_words: usize) -> String {
    let words: Vec<&str> = s.split_whitespace().take(max_words.max(1)).collect();
    trim_terminal(&words.join(" ")).to_string()
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Leading sentences of `text` until at least `target` words are collected.
fn leading_sentences(text: &str, target: usize) -> String {
    let mut out: Vec<&str> = Vec::new();
    let mut words = 0;
    let mut start = 0;
    let mut ends: Vec<usize> = SENTENCE_END.find_iter(text).map(|m| m.end()).collect();
    if ends.last() != Some(&text.len()) {
        ends.push(text.len());
    }
    for end in ends {
        let sentence = trim_terminal(&text[start..end]);
        start = end;
        if sentence.is_empty() {
            continue;
        }
        out.push(sentence);
        words += word_count(sentence);
        if words >= target {
            break;
        }
    }
    out.join(". ")
}

/// Deterministic summary: cleaned title followed by the leading sentences of
/// the cleaned description, capped at `max_words`. Sentences are added until
/// the summary reaches half the cap so short and long sources end up at
/// comparable lengths.
pub fn rule_fallback_summarize(title: &str, description: &str, max_words: usize) -> String {
    let title = clean(title);
    let body = clean_inner(description, true);
    let target = (max_words / 2).max(1);
    let body = match body.strip_prefix(title.as_str()) {
        Some(rest) if !title.is_empty() => trim_terminal(rest.trim_start_matches(|c: char| c == '.' || c.is_whitespace())).to_string(),
        _ => body,
    };
    let remaining = target.saturating_sub(word_count(&title)).max(1);
    let lead = leading_sentences(&body, remaining);
    let combined = match (title.is_empty(), lead.is_empty()) {
        (false, false) => format!("{title}. {lead}"),
        (false, true) => title,
        (true, _) => lead,
    };
    let out = truncate_words(&combined, max_words);
    if out.is_empty() {
        UNTITLED.to_string()
    } else {
        out
    }
}

/// Summary for an item whose description is an editorial synopsis: the
/// cleaned description alone, cut the same way as [`rule_fallback_summarize`].
pub fn passthrough_summarize(description: &str, max_words: usize) -> String {
    let body = clean_inner(description, true);
    truncate_words(&leading_sentences(&body, (max_words / 2).max(1)), max_words)
}

/// A summarizer backed by something other than the rules.
pub trait Harmonizer: Send + Sync {
    /// `None` means the harmonizer failed and the rules take over.
    fn summarize(&self, title: &str, description: &str, platform: Platform) -> Option<String>;
}

/// Harmonizer using a remote chat model with the versioned prompt.
pub struct ModelHarmonizer {
    model: ChatModel,
    max_words: usize,
    failures: AtomicUsize,
}

impl ModelHarmonizer {
    pub fn new(model: ChatModel, max_words: usize) -> Self {
        ModelHarmonizer { model, max_words, failures: AtomicUsize::new(0) }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }
}

impl Harmonizer for ModelHarmonizer {
    fn summarize(&self, title: &str, description: &str, _platform: Platform) -> Option<String> {
        let words = self.max_words.to_string();
        let prompt =
            render_prompt(PROMPT_TEMPLATE, &[("max_words", &words), ("title", title), ("description", description)]);
        match self.model.complete(&prompt) {
            Ok(reply) => Some(reply),
            Err(err) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(%err, "harmonizer call failed, using rules");
                None
            }
        }
    }
}

/// Summarizes one item. Netflix synopses are passed through; everything
/// else gets title plus leading sentences. A harmonizer's reply is cleaned
/// and capped, and an empty or failed reply falls back to the rules.
pub fn harmonize_item(item: &EnrichedItem, harmonizer: Option<&dyn Harmonizer>, max_words: usize) -> HarmonizedItem {
    let from_model = harmonizer
        .and_then(|h| h.summarize(&item.title, &item.description, item.event.platform))
        .map(|reply| truncate_words(&clean(&reply), max_words))
        .filter(|s| !s.is_empty());
    let (summary, harmonizer) = match from_model {
        Some(s) => (s, HarmonizerKind::Provider),
        None => (rule_summary(item, max_words), HarmonizerKind::RuleFallback),
    };
    HarmonizedItem { item: item.clone(), summary, harmonizer }
}

fn rule_summary(item: &EnrichedItem, max_words: usize) -> String {
    if item.event.platform == Platform::Netflix && !item.description.trim().is_empty() {
        let s = passthrough_summarize(&item.description, max_words);
        if !s.is_empty() {
            return s;
        }
    }
    rule_fallback_summarize(&item.title, &item.description, max_words)
}

/// Harmonizes every item with up to `concurrency` calls in flight. Output
/// order matches input order.
pub fn harmonize_all(
    items: &[EnrichedItem],
    harmonizer: Option<&dyn Harmonizer>,
    max_words: usize,
    concurrency: usize,
) -> Vec<HarmonizedItem> {
    if harmonizer.is_none() || concurrency <= 1 {
        return items.iter().map(|i| harmonize_item(i, harmonizer, max_words)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<HarmonizedItem>>> = Mutex::new(vec![None; items.len()]);
    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let h = harmonize_item(&items[i], harmonizer, max_words);
                slots.lock().unwrap()[i] = Some(h);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|s| s.expect("slot filled")).collect()
}

/// Text handed to the embedder. With harmonization off the raw title and
/// description are used as-is.
pub fn embedding_text(item: &HarmonizedItem, harmonization_enabled: bool) -> String {
    if harmonization_enabled {
        item.summary.clone()
    } else if item.item.description.is_empty() {
        item.item.title.clone()
    } else {
        format!("{}\n{}", item.item.title, item.item.description)
    }
}
