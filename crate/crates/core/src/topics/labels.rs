//! Topic label text: TF-IDF terms over member summaries, or a text model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::llm::{render_prompt, ChatModel};

pub const LABEL_PROMPT: &str = include_str!("../../assets/label_prompt.v1.txt");
pub const LABEL_PROMPT_VERSION: &str = "label_prompt.v1";
/// Most member summaries shown to a text model.
pub const PROMPT_SAMPLE: usize = 20;
pub const MAX_LABEL_WORDS: usize = 4;

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "do", "does", "for", "from", "get", "gets", "has", "have", "he", "her", "his", "how", "i", "if", "in", "into",
    "is", "it", "its", "just", "me", "more", "my", "new", "no", "not", "of", "on", "one", "or", "our", "out", "over",
    "she", "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "to", "up", "us",
    "video", "was", "we", "were", "what", "when", "which", "who", "why", "will", "with", "you", "your",
];

/// Lowercased word tokens; stopwords, single characters and pure numbers are
/// returned as `None` so bigrams never span them.
fn tokens(text: &str) -> Vec<Option<String>> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let keep = w.chars().count() > 1 && !w.chars().all(|c| c.is_ascii_digit()) && !STOPWORDS.contains(&w.as_str());
            keep.then_some(w)
        })
        .collect()
}

/// Unigrams and bigrams of one text, with repeats.
pub fn terms(text: &str) -> Vec<String> {
    let toks = tokens(text);
    let mut out: Vec<String> = toks.iter().flatten().cloned().collect();
    for pair in toks.windows(2) {
        if let [Some(a), Some(b)] = pair {
            out.push(format!("{a} {b}"));
        }
    }
    out
}

/// Document frequencies over the whole dataset's summaries.
pub struct TfIdf {
    docs: Vec<Vec<String>>,
    df: HashMap<String, usize>,
}

impl TfIdf {
    pub fn new<S: AsRef<str>>(summaries: &[S]) -> Self {
        let docs: Vec<Vec<String>> = summaries.iter().map(|s| terms(s.as_ref())).collect();
        let mut df = HashMap::new();
        for d in &docs {
            for t in d.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        TfIdf { docs, df }
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Terms of the member documents ranked by term frequency (occurrences
    /// per member) times idf, highest first, ties alphabetical.
    pub fn rank(&self, members: &[usize]) -> Vec<(String, f64)> {
        if members.is_empty() {
            return Vec::new();
        }
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for &m in members {
            for t in &self.docs[m] {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let size = members.len() as f64;
        let mut ranked: Vec<(String, f64)> =
            tf.into_iter().map(|(t, c)| (t.to_string(), c as f64 / size * self.idf(t))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }
}

/// Provides label text for a group of summaries.
pub trait TopicLabeler: Send + Sync {
    /// `None` means the labeler failed and TF-IDF terms are used.
    fn label(&self, summaries: &[&str]) -> Option<String>;
}

/// Labeler backed by a remote chat model.
pub struct ModelLabeler {
    model: ChatModel,
    failures: AtomicUsize,
}

impl ModelLabeler {
    pub fn new(model: ChatModel) -> Self {
        ModelLabeler { model, failures: AtomicUsize::new(0) }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }
}

/// Evenly spaced sample of at most [`PROMPT_SAMPLE`] entries.
pub fn prompt_sample<'a>(summaries: &[&'a str]) -> Vec<&'a str> {
    let n = summaries.len();
    if n <= PROMPT_SAMPLE {
        return summaries.to_vec();
    }
    (0..PROMPT_SAMPLE).map(|i| summaries[i * n / PROMPT_SAMPLE]).collect()
}

impl TopicLabeler for ModelLabeler {
    fn label(&self, summaries: &[&str]) -> Option<String> {
        let listing: String = prompt_sample(summaries).iter().map(|s| format!("- {s}\n")).collect();
        let words = MAX_LABEL_WORDS.to_string();
        let prompt = render_prompt(LABEL_PROMPT, &[("max_words", &words), ("summaries", listing.trim_end())]);
        match self.model.complete(&prompt) {
            Ok(reply) => Some(reply),
            Err(err) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(%err, "topic labeler failed, using TF-IDF terms");
                None
            }
        }
    }
}

/// First line of a model reply without surrounding quotes or punctuation,
/// capped at [`MAX_LABEL_WORDS`].
pub fn clean_label(reply: &str) -> String {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = line.trim_matches(|c: char| !c.is_alphanumeric());
    line.split_whitespace().take(MAX_LABEL_WORDS).collect::<Vec<_>>().join(" ")
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Picks a label not in `used`. Starts from the model's reply or the top
/// term, then appends the next-ranked terms until the label is unique.
pub fn choose_label(model_reply: Option<&str>, ranked: &[(String, f64)], used: &BTreeSet<String>, fallback_id: u32) -> String {
    let mut label = model_reply.map(clean_label).filter(|l| !l.is_empty()).unwrap_or_default();
    let mut rest = ranked.iter().map(|(t, _)| t.as_str());
    if label.is_empty() {
        label = rest.next().map(str::to_string).unwrap_or_else(|| format!("topic {fallback_id}"));
    }
    while used.contains(&label) {
        let words: BTreeSet<&str> = label.split_whitespace().collect();
        let next = rest.by_ref().find(|t| {
            word_count(&label) + word_count(t) <= MAX_LABEL_WORDS && t.split_whitespace().all(|w| !words.contains(w))
        });
        match next {
            Some(t) => label = format!("{label} {t}"),
            None => {
                let mut kept: Vec<&str> = label.split_whitespace().take(MAX_LABEL_WORDS - 1).collect();
                let suffix = fallback_id.to_string();
                kept.push(&suffix);
                label = kept.join(" ");
                break;
            }
        }
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_skip_stopwords_and_bigrams_do_not_span_them() {
        assert_eq!(terms("The Minecraft house of dreams"), vec!["minecraft", "house", "dreams", "minecraft house"]);
    }

    #[test]
    fn idf_oracle() {
        let t = TfIdf::new(&["cat dog", "cat", "fish"]);
        assert!((t.idf("cat") - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-12);
        assert!((t.idf("fish") - (2.0f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ranking_prefers_distinctive_terms_then_alphabet() {
        let docs = ["minecraft build", "minecraft redstone", "cooking pasta", "cooking soup"];
        let t = TfIdf::new(&docs);
        let ranked = t.rank(&[0, 1]);
        assert_eq!(ranked[0].0, "minecraft");
        // The four singletons tie and come out alphabetically.
        let tied: Vec<&str> = ranked[1..].iter().map(|r| r.0.as_str()).collect();
        assert_eq!(tied, vec!["build", "minecraft build", "minecraft redstone", "redstone"]);
    }

    #[test]
    fn duplicate_top_terms_disambiguated() {
        let used = BTreeSet::from(["minecraft".to_string()]);
        let ranked = vec![("minecraft".to_string(), 2.0), ("minecraft build".to_string(), 1.0), ("redstone".to_string(), 0.5)];
        assert_eq!(choose_label(None, &ranked, &used, 3), "minecraft redstone");
        let exhausted = vec![("minecraft".to_string(), 2.0)];
        assert_eq!(choose_label(None, &exhausted, &used, 3), "minecraft 3");
    }

    #[test]
    fn model_reply_is_cleaned_and_capped() {
        assert_eq!(clean_label("\n\"Retro gaming speedrun videos today\"\nextra"), "Retro gaming speedrun videos");
        assert_eq!(choose_label(Some("  "), &[("x".into(), 1.0)], &BTreeSet::new(), 0), "x");
    }

    #[test]
    fn sample_is_even_and_bounded() {
        let owned: Vec<String> = (0..100).map(|i| i.to_string()).collect();
        let all: Vec<&str> = owned.iter().map(String::as_str).collect();
        let s = prompt_sample(&all);
        assert_eq!(s.len(), PROMPT_SAMPLE);
        assert_eq!((s[0], s[1], s[19]), ("0", "5", "95"));
    }
}
