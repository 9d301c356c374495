//! Time index over a finished layout: cumulative slices, per-window topic
//! rankings, calendar bins and time-lapse frames. Coordinates never change;
//! time only controls which points are visible.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{EventId, MapPoint, Platform, TopicId, TopicLabel};

/// Ranges shorter than this are binned by day instead of by month.
pub const DAILY_BIN_THRESHOLD_DAYS: i64 = 90;
/// Topics listed per bin and per time-lapse frame.
pub const TOP_TOPICS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinUnit {
    Month,
    Day,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCount {
    pub topic_id: TopicId,
    pub label: String,
    pub count: usize,
}

type Step = fn(DateTime<Utc>) -> DateTime<Utc>;

/// One calendar bin, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBin {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub count: usize,
    pub platforms: BTreeMap<Platform, usize>,
    pub top_topics: Vec<TopicCount>,
}

/// Timeline payload: bins over the dataset's range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
    pub unit: BinUnit,
    pub total: usize,
    pub bins: Vec<TimeBin>,
}

/// One time-lapse frame: everything watched up to `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub t: DateTime<Utc>,
    pub visible: Vec<EventId>,
    pub top_topics: Vec<TopicCount>,
}

/// Immutable index over one layout's points.
#[derive(Debug, Clone)]
pub struct TimelineIndex {
    /// Point indices sorted by `(watched_at, item_id)`.
    order: Vec<usize>,
    times: Vec<DateTime<Utc>>,
    ids: Vec<EventId>,
    topics: Vec<Option<TopicId>>,
    platforms: Vec<Platform>,
    labels: BTreeMap<TopicId, String>,
}

fn month_start(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.from_utc_datetime(&NaiveDate::from_ymd_opt(t.year(), t.month(), 1).expect("valid").and_hms_opt(0, 0, 0).expect("valid"))
}

fn next_month(t: DateTime<Utc>) -> DateTime<Utc> {
    let (y, m) = if t.month() == 12 { (t.year() + 1, 1) } else { (t.year(), t.month() + 1) };
    Utc.from_utc_datetime(&NaiveDate::from_ymd_opt(y, m, 1).expect("valid").and_hms_opt(0, 0, 0).expect("valid"))
}

fn day_start(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.from_utc_datetime(&t.date_naive().and_hms_opt(0, 0, 0).expect("valid"))
}

impl TimelineIndex {
    /// `labels` names the topics that appear in the points' `topic_id`.
    pub fn build(points: &[MapPoint], labels: &[TopicLabel]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| (points[a].watched_at, &points[a].item_id).cmp(&(points[b].watched_at, &points[b].item_id)));
        TimelineIndex {
            times: order.iter().map(|&i| points[i].watched_at).collect(),
            ids: order.iter().map(|&i| points[i].item_id.clone()).collect(),
            topics: order.iter().map(|&i| points[i].topic_id).collect(),
            platforms: order.iter().map(|&i| points[i].platform).collect(),
            order,
            labels: labels.iter().map(|l| (l.topic_id, l.label.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn min(&self) -> Option<DateTime<Utc>> {
        self.times.first().copied()
    }

    pub fn max(&self) -> Option<DateTime<Utc>> {
        self.times.last().copied()
    }

    /// Indices (into the original points) of everything watched at or
    /// before `t`, in time order.
    pub fn slice_until(&self, t: DateTime<Utc>) -> &[usize] {
        &self.order[..self.times.partition_point(|&x| x <= t)]
    }

    /// Ids of everything watched at or before `t`, in time order.
    pub fn ids_until(&self, t: DateTime<Utc>) -> &[EventId] {
        &self.ids[..self.times.partition_point(|&x| x <= t)]
    }

    fn window(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> std::ops::Range<usize> {
        let lo = self.times.partition_point(|&x| x < from);
        let hi = self.times.partition_point(|&x| x <= to).max(lo);
        lo..hi
    }

    /// Number of points watched in `[from, to]`.
    pub fn window_len(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> usize {
        self.window(from, to).len()
    }

    /// Member counts per topic among points watched in `[from, to]`.
    pub fn window_counts(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> BTreeMap<TopicId, usize> {
        let mut counts = BTreeMap::new();
        for t in self.topics[self.window(from, to)].iter().flatten() {
            *counts.entry(*t).or_insert(0) += 1;
        }
        counts
    }

    fn rank(&self, counts: BTreeMap<TopicId, usize>, top_n: usize) -> Vec<TopicCount> {
        let mut ranked: Vec<TopicCount> = counts
            .into_iter()
            .map(|(topic_id, count)| TopicCount {
                topic_id,
                label: self.labels.get(&topic_id).cloned().unwrap_or_default(),
                count,
            })
            .collect();
        ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)).then(a.topic_id.cmp(&b.topic_id)));
        ranked.truncate(top_n);
        ranked
    }

    /// Topics ranked by member count within `[from, to]`, ties by label.
    pub fn window_topics(&self, from: DateTime<Utc>, to: DateTime<Utc>, top_n: usize) -> Vec<TopicCount> {
        self.rank(self.window_counts(from, to), top_n)
    }

    pub fn bin_unit(&self) -> BinUnit {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) if b - a < Duration::days(DAILY_BIN_THRESHOLD_DAYS) => BinUnit::Day,
            _ => BinUnit::Month,
        }
    }

    /// Calendar bins covering the whole range; counts sum to the number of
    /// points.
    pub fn timeline(&self) -> Timeline {
        let unit = self.bin_unit();
        let mut bins = Vec::new();
        if let (Some(min), Some(max)) = (self.min(), self.max()) {
            let (mut start, step): (DateTime<Utc>, Step) = match unit {
                BinUnit::Month => (month_start(min), next_month),
                BinUnit::Day => (day_start(min), |t| t + Duration::days(1)),
            };
            while start <= max {
                let end = step(start);
                let lo = self.times.partition_point(|&x| x < start);
                let hi = self.times.partition_point(|&x| x < end);
                let mut platforms = BTreeMap::new();
                let mut topics = BTreeMap::new();
                for i in lo..hi {
                    *platforms.entry(self.platforms[i]).or_insert(0) += 1;
                    if let Some(t) = self.topics[i] {
                        *topics.entry(t).or_insert(0) += 1;
                    }
                }
                bins.push(TimeBin { start, end, count: hi - lo, platforms, top_topics: self.rank(topics, TOP_TOPICS) });
                start = end;
            }
        }
        Timeline { start: self.min(), end: self.max(), unit, total: self.len(), bins }
    }

    /// Evenly spaced frame times from the first to the last watch; the last
    /// frame time is exactly the last watch.
    pub fn frame_times(&self, n_frames: usize) -> Vec<DateTime<Utc>> {
        let (Some(min), Some(max)) = (self.min(), self.max()) else {
            return Vec::new();
        };
        let n = n_frames.max(2);
        let span = (max - min).num_milliseconds();
        (0..n)
            .map(|i| if i == n - 1 { max } else { min + Duration::milliseconds(span * i as i64 / (n - 1) as i64) })
            .collect()
    }

    /// Cumulative frames: frame `i` shows everything up to its time and the
    /// top topics from the start to that time.
    pub fn timelapse_frames(&self, n_frames: usize) -> Vec<Frame> {
        let Some(min) = self.min() else {
            return Vec::new();
        };
        self.frame_times(n_frames)
            .into_iter()
            .map(|t| Frame { t, visible: self.ids_until(t).to_vec(), top_topics: self.window_topics(min, t, TOP_TOPICS) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(day: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap() + Duration::days(day)
    }

    fn pt(i: usize, day: i64, topic: Option<u32>) -> MapPoint {
        MapPoint {
            item_id: EventId::from_raw(format!("{i:04}")),
            x: i as f64,
            y: 0.0,
            platform: if i.is_multiple_of(2) { Platform::Youtube } else { Platform::Netflix },
            watched_at: at(day),
            topic_id: topic.map(TopicId),
        }
    }

    fn labels() -> Vec<TopicLabel> {
        ["beta", "alpha", "gamma"]
            .iter()
            .enumerate()
            .map(|(i, l)| TopicLabel { topic_id: TopicId(i as u32), label: l.to_string(), frequency: 0, centroid: (0.0, 0.0), min_zoom: 0 })
            .collect()
    }

    #[test]
    fn slice_edges() {
        let pts: Vec<_> = (0..10).map(|i| pt(i, i as i64 * 3, None)).collect();
        let idx = TimelineIndex::build(&pts, &[]);
        assert_eq!(idx.slice_until(at(27)).len(), 10);
        assert!(idx.slice_until(at(-1)).is_empty());
        assert_eq!(idx.slice_until(at(4)), &[0, 1]);
    }

    #[test]
    fn window_ties_are_alphabetical() {
        let pts = vec![pt(0, 0, Some(0)), pt(1, 1, Some(1)), pt(2, 2, Some(2)), pt(3, 3, Some(2))];
        let idx = TimelineIndex::build(&pts, &labels());
        let w: Vec<String> = idx.window_topics(at(0), at(3), 5).into_iter().map(|t| t.label).collect();
        assert_eq!(w, vec!["gamma", "alpha", "beta"]);
        assert!(idx.window_topics(at(10), at(20), 5).is_empty());
        assert_eq!(idx.window_topics(at(0), at(3), 1).len(), 1);
    }

    #[test]
    fn monthly_and_daily_bins() {
        let pts = vec![pt(0, 0, None), pt(1, 40, Some(0)), pt(2, 200, None)];
        let tl = TimelineIndex::build(&pts, &labels()).timeline();
        assert_eq!(tl.unit, BinUnit::Month);
        assert_eq!(tl.bins.len(), 7);
        assert_eq!(tl.bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(tl.bins[1].top_topics[0].label, "beta");
        let short = TimelineIndex::build(&[pt(0, 0, None), pt(1, 9, None)], &[]).timeline();
        assert_eq!((short.unit, short.bins.len()), (BinUnit::Day, 10));
    }

    #[test]
    fn two_frames_span_the_range() {
        let pts: Vec<_> = (0..5).map(|i| pt(i, i as i64, None)).collect();
        let idx = TimelineIndex::build(&pts, &[]);
        let frames = idx.timelapse_frames(2);
        assert_eq!(frames.iter().map(|f| f.t).collect::<Vec<_>>(), vec![at(0), at(4)]);
        assert_eq!(frames[1].visible.len(), 5);
    }

    proptest! {
        #[test]
        fn slices_nest_and_windows_add_up(days in prop::collection::vec((0i64..2000, prop::option::of(0u32..3)), 1..80),
                                           cuts in prop::collection::vec(0i64..2000, 0..6)) {
            let pts: Vec<_> = days.iter().enumerate().map(|(i, &(d, t))| pt(i, d, t)).collect();
            let idx = TimelineIndex::build(&pts, &labels());
            let mut prev = 0;
            for f in idx.timelapse_frames(12) {
                prop_assert!(f.visible.len() >= prev);
                prop_assert_eq!(&f.visible[..prev], &idx.ids_until(f.t)[..prev]);
                prev = f.visible.len();
            }
            let mut bounds: Vec<i64> = cuts;
            bounds.sort();
            let mut total: BTreeMap<TopicId, usize> = BTreeMap::new();
            let mut from = at(-1);
            for b in bounds.iter().map(|&d| at(d)).chain([at(3000)]) {
                for (k, v) in idx.window_counts(from, b) {
                    *total.entry(k).or_insert(0) += v;
                }
                from = b + Duration::nanoseconds(1);
            }
            prop_assert_eq!(total, idx.window_counts(at(-1), at(3000)));
            prop_assert_eq!(idx.timeline().bins.iter().map(|b| b.count).sum::<usize>(), pts.len());
        }
    }
}
