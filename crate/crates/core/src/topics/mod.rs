//! Topics: density clusters of the semantic map with frequency-ranked
//! labels, one level of subtopics, and zoom visibility levels.

mod density;
mod labels;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use density::{cluster_points, core_distances};
pub use labels::{
    choose_label, clean_label, prompt_sample, terms, ModelLabeler, TfIdf, TopicLabeler, LABEL_PROMPT,
    LABEL_PROMPT_VERSION, MAX_LABEL_WORDS, PROMPT_SAMPLE,
};

use crate::config::TopicsConfig;
use crate::model::{EventId, MapPoint, TopicId, TopicLabel};

/// A labeled cluster and its members (sorted by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicNode {
    pub label: TopicLabel,
    pub members: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subtopics: Vec<TopicNode>,
}

/// Major topics, most frequent first, each with optional subtopics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicTree {
    pub topics: Vec<TopicNode>,
}

impl TopicTree {
    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Every node, each major topic followed by its subtopics.
    pub fn nodes(&self) -> impl Iterator<Item = &TopicNode> {
        self.topics.iter().flat_map(|t| std::iter::once(t).chain(t.subtopics.iter()))
    }

    pub fn labels(&self) -> Vec<&TopicLabel> {
        self.nodes().map(|n| &n.label).collect()
    }

    pub fn find(&self, id: TopicId) -> Option<&TopicNode> {
        self.nodes().find(|n| n.label.topic_id == id)
    }

    /// Member ids of a major topic or subtopic.
    pub fn members(&self, id: TopicId) -> Option<&[EventId]> {
        self.find(id).map(|n| n.members.as_slice())
    }

    /// The major topic each member id belongs to.
    pub fn assignments(&self) -> BTreeMap<&EventId, TopicId> {
        self.topics.iter().flat_map(|t| t.members.iter().map(move |m| (m, t.label.topic_id))).collect()
    }

    /// Structural invariants: disjoint major memberships, subtopic members
    /// drawn from their parent, and frequencies matching member counts.
    pub fn is_consistent(&self) -> bool {
        let mut seen = BTreeSet::new();
        for t in &self.topics {
            if t.label.frequency != t.members.len() || !t.members.iter().all(|m| seen.insert(m)) {
                return false;
            }
            let parent: BTreeSet<&EventId> = t.members.iter().collect();
            let mut sub_total = 0;
            for s in &t.subtopics {
                sub_total += s.members.len();
                if s.label.frequency != s.members.len() || !s.members.iter().all(|m| parent.contains(m)) {
                    return false;
                }
            }
            if sub_total > t.members.len() {
                return false;
            }
        }
        true
    }
}

fn centroid(points: &[MapPoint], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i].x, sy + points[i].y));
    (sx / n, sy / n)
}

/// Groups point indices by cluster, most members first, ties by the
/// smallest member id. Members are sorted by id.
fn groups(points: &[MapPoint], clusters: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        if let Some(c) = c {
            by_cluster.entry(*c).or_default().push(i);
        }
    }
    let mut out: Vec<Vec<usize>> = by_cluster.into_values().collect();
    for g in &mut out {
        g.sort_by(|&a, &b| points[a].item_id.cmp(&points[b].item_id));
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| points[a[0]].item_id.cmp(&points[b[0]].item_id)));
    out
}

/// Minimum cluster size used when splitting a major topic into subtopics.
pub fn subtopic_min_size(min_cluster_size: usize) -> usize {
    (min_cluster_size / 2).max(3)
}

/// Builds the labeled tree from cluster assignments. `summaries[i]` is the
/// text of `points[i]`; TF-IDF statistics use the whole dataset. Subtopics
/// come from re-clustering each major topic's points with a smaller minimum
/// size, and exist only when that yields at least two clusters. Major topics
/// get ids `0..M` by frequency, subtopics the ids after that. `min_zoom` is
/// left at 0; see [`assign_zoom_levels`].
pub fn label_topics(
    points: &[MapPoint],
    clusters: &[Option<usize>],
    summaries: &[&str],
    labeler: Option<&dyn TopicLabeler>,
    cfg: &TopicsConfig,
) -> TopicTree {
    assert_eq!(points.len(), clusters.len(), "one cluster entry per point");
    assert_eq!(points.len(), summaries.len(), "one summary per point");
    let majors = groups(points, clusters);
    if majors.is_empty() {
        return TopicTree::default();
    }
    let tfidf = TfIdf::new(summaries);
    let mut used = BTreeSet::new();
    let mut next_sub_id = majors.len() as u32;
    let node = |idx: &[usize], id: u32, used: &mut BTreeSet<String>| -> TopicNode {
        let texts: Vec<&str> = idx.iter().map(|&i| summaries[i]).collect();
        let reply = labeler.and_then(|l| l.label(&texts));
        let label = choose_label(reply.as_deref(), &tfidf.rank(idx), used, id);
        used.insert(label.clone());
        TopicNode {
            label: TopicLabel {
                topic_id: TopicId(id),
                label,
                frequency: idx.len(),
                centroid: centroid(points, idx),
                min_zoom: 0,
            },
            members: idx.iter().map(|&i| points[i].item_id.clone()).collect(),
            subtopics: Vec::new(),
        }
    };

    let mut tree = TopicTree::default();
    for (m, idx) in majors.iter().enumerate() {
        tree.topics.push(node(idx, m as u32, &mut used));
    }
    for (m, idx) in majors.iter().enumerate() {
        let coords: Vec<[f64; 2]> = idx.iter().map(|&i| [points[i].x, points[i].y]).collect();
        let local = cluster_points(&coords, subtopic_min_size(cfg.min_cluster_size), cfg.max_core_distance);
        let member_points: Vec<MapPoint> = idx.iter().map(|&i| points[i].clone()).collect();
        let subs = groups(&member_points, &local);
        if subs.len() < 2 {
            continue;
        }
        for s in subs {
            let global: Vec<usize> = s.iter().map(|&k| idx[k]).collect();
            let child = node(&global, next_sub_id, &mut used);
            next_sub_id += 1;
            tree.topics[m].subtopics.push(child);
        }
    }
    tree
}

/// Dense-rank quantile bucket of each frequency: the `r`-th largest distinct
/// value (from 0) of `d` distinct values lands in level `r * levels / d`.
fn frequency_buckets(freqs: &[usize], levels: u32) -> Vec<u32> {
    let distinct: Vec<usize> = freqs.iter().copied().collect::<BTreeSet<_>>().into_iter().rev().collect();
    let d = distinct.len() as u64;
    freqs
        .iter()
        .map(|f| {
            let r = distinct.iter().position(|x| x == f).expect("present") as u64;
            (r * u64::from(levels) / d) as u32
        })
        .collect()
}

/// Assigns `min_zoom`: major topics are bucketed by frequency into `levels`
/// levels with the most frequent at 0; each subtopic starts one level below
/// its parent. Levels are then raised until no topic is visible at a zoom
/// where a more frequent one is hidden.
pub fn assign_zoom_levels(tree: &mut TopicTree, levels: u32) {
    let levels = levels.max(1);
    tree.topics.sort_by(|a, b| {
        b.label.frequency.cmp(&a.label.frequency).then_with(|| a.label.topic_id.cmp(&b.label.topic_id))
    });
    let freqs: Vec<usize> = tree.topics.iter().map(|t| t.label.frequency).collect();
    for (t, z) in tree.topics.iter_mut().zip(frequency_buckets(&freqs, levels)) {
        t.label.min_zoom = z;
        for s in &mut t.subtopics {
            s.label.min_zoom = z + 1;
        }
    }
    loop {
        let mut changed = false;
        let mut all: Vec<(usize, u32)> = tree.nodes().map(|n| (n.label.frequency, n.label.min_zoom)).collect();
        all.sort_by_key(|a| std::cmp::Reverse(a.0));
        // Highest level among strictly more frequent topics, per frequency.
        let mut floor: BTreeMap<usize, u32> = BTreeMap::new();
        let mut running = 0u32;
        let mut i = 0;
        while i < all.len() {
            let f = all[i].0;
            floor.insert(f, running);
            let mut j = i;
            while j < all.len() && all[j].0 == f {
                running = running.max(all[j].1);
                j += 1;
            }
            i = j;
        }
        for t in &mut tree.topics {
            let z = t.label.min_zoom.max(floor[&t.label.frequency]);
            changed |= z != t.label.min_zoom;
            t.label.min_zoom = z;
            for s in &mut t.subtopics {
                let zs = s.label.min_zoom.max(floor[&s.label.frequency]).max(z + 1);
                changed |= zs != s.label.min_zoom;
                s.label.min_zoom = zs;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Clusters a semantic map, labels and levels the topics, and writes each
/// point's major topic into `topic_id`.
pub fn build_topics(
    points: &mut [MapPoint],
    summaries: &[&str],
    labeler: Option<&dyn TopicLabeler>,
    cfg: &TopicsConfig,
) -> TopicTree {
    let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    let clusters = cluster_points(&coords, cfg.min_cluster_size, cfg.max_core_distance);
    let mut tree = label_topics(points, &clusters, summaries, labeler, cfg);
    assign_zoom_levels(&mut tree, cfg.zoom_levels);
    let assigned = tree.assignments();
    let lookup: BTreeMap<EventId, TopicId> = assigned.into_iter().map(|(k, v)| (k.clone(), v)).collect();
    for p in points.iter_mut() {
        p.topic_id = lookup.get(&p.item_id).copied();
    }
    tree
}
