//! Viewport queries over one layout: filtering, density thinning, contour
//! lines, topic labels and level of detail.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use mirror_core::layout::{Layout2D, LayoutKind};
use mirror_core::model::{EventId, Platform, TopicId};
use mirror_core::pipeline::ItemInfo;
use mirror_core::topics::TopicTree;
use serde::{Deserialize, Serialize};

/// Side length of the density grid used for thinning and contours.
pub const DENSITY_GRID: usize = 64;
/// Contour levels as fractions of the peak smoothed density.
pub const CONTOUR_FRACTIONS: [f64; 4] = [0.1, 0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("bbox must be `xmin,ymin,xmax,ymax` with finite values and min < max")]
    BadBBox,
    #[error("zoom {zoom} is outside 0..={max}")]
    ZoomOutOfRange { zoom: u32, max: u32 },
    #[error("unknown platform `{0}`")]
    BadPlatform(String),
    #[error("`{0}` is not an RFC 3339 timestamp")]
    BadTime(String),
    #[error("max_points must be at least 1")]
    BadMaxPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, QueryError> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(QueryError::BadBBox);
        }
        Ok(BBox { xmin, ymin, xmax, ymax })
    }

    pub fn parse(s: &str) -> Result<Self, QueryError> {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| QueryError::BadBBox)?;
        match v.as_slice() {
            [a, b, c, d] => BBox::new(*a, *b, *c, *d),
            _ => Err(QueryError::BadBBox),
        }
    }

    /// Smallest box holding every point, widened to a unit span on a
    /// degenerate axis.
    pub fn extent(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (x, y) in points {
            xmin = xmin.min(x);
            ymin = ymin.min(y);
            xmax = xmax.max(x);
            ymax = ymax.max(y);
        }
        if xmin > xmax {
            return BBox { xmin: 0.0, ymin: 0.0, xmax: 1.0, ymax: 1.0 };
        }
        if xmax - xmin <= 0.0 {
            xmin -= 0.5;
            xmax += 0.5;
        }
        if ymax - ymin <= 0.0 {
            ymin -= 0.5;
            ymax += 0.5;
        }
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    fn as_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

/// How much of an item the client should draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lod {
    Dot,
    Title,
    Thumbnail,
}

/// Dots below half the zoom range, titles up to the deepest level, and
/// thumbnails at the deepest level. With six levels: dot for 0-2, title for
/// 3-4, thumbnail for 5.
pub fn lod_for(zoom: u32, levels: u32) -> Lod {
    let levels = levels.max(1);
    if zoom + 1 >= levels {
        Lod::Thumbnail
    } else if zoom >= levels.div_ceil(2) {
        Lod::Title
    } else {
        Lod::Dot
    }
}

/// Map query parameters as they arrive on the wire.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RawMapQuery {
    pub bbox: Option<String>,
    pub zoom: Option<u32>,
    pub platforms: Option<String>,
    pub until: Option<String>,
    pub max_points: Option<usize>,
    pub layout: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewportQuery {
    /// `None` means the layout's full extent.
    pub bbox: Option<BBox>,
    pub zoom: u32,
    /// `None` means every platform.
    pub platforms: Option<BTreeSet<Platform>>,
    pub until: Option<DateTime<Utc>>,
    pub max_points: usize,
}

impl RawMapQuery {
    pub fn resolve(&self, levels: u32, default_max_points: usize) -> Result<ViewportQuery, QueryError> {
        let bbox = self.bbox.as_deref().map(BBox::parse).transpose()?;
        let zoom = self.zoom.unwrap_or(0);
        let max = levels.max(1) - 1;
        if zoom > max {
            return Err(QueryError::ZoomOutOfRange { zoom, max });
        }
        let platforms = self
            .platforms
            .as_deref()
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse::<Platform>().map_err(|_| QueryError::BadPlatform(p.to_string())))
                    .collect::<Result<BTreeSet<_>, _>>()
            })
            .transpose()?;
        let until = self
            .until
            .as_deref()
            .map(|s| {
                DateTime::parse_from_rfc3339(s.trim())
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|_| QueryError::BadTime(s.to_string()))
            })
            .transpose()?;
        let max_points = self.max_points.unwrap_or(default_max_points);
        if max_points == 0 {
            return Err(QueryError::BadMaxPoints);
        }
        Ok(ViewportQuery { bbox, zoom, platforms, until, max_points })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewPoint {
    pub item_id: EventId,
    pub x: f64,
    pub y: f64,
    pub platform: Platform,
    pub watched_at: DateTime<Utc>,
    pub topic_id: Option<TopicId>,
    pub lod: Lod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thumbnail_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewLabel {
    pub topic_id: TopicId,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub frequency: usize,
    pub min_zoom: u32,
    pub parent: Option<TopicId>,
}

/// One iso-density level; each path is a polyline in layout coordinates.
/// Closed paths repeat their first vertex at the end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contour {
    pub level: f64,
    pub paths: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapView {
    pub layout_id: String,
    pub kind: LayoutKind,
    pub bbox: [f64; 4],
    pub zoom: u32,
    /// Points matching the filters before thinning.
    pub total: usize,
    pub thinned: bool,
    pub points: Vec<ViewPoint>,
    pub labels: Vec<ViewLabel>,
    pub contours: Vec<Contour>,
}

/// Topic labels positioned for `layout`. On the layout the topics were
/// computed from, the stored centroids are used; elsewhere each centroid is
/// the mean position of the topic's members in `layout`.
pub fn layout_labels(tree: &TopicTree, layout: &Layout2D, own_layout: bool) -> Vec<ViewLabel> {
    let index: HashMap<&EventId, usize> = layout.points.iter().enumerate().map(|(i, p)| (&p.item_id, i)).collect();
    let mut out = Vec::new();
    for major in &tree.topics {
        let parent = major.label.topic_id;
        for (node, parent) in std::iter::once((major, None)).chain(major.subtopics.iter().map(|s| (s, Some(parent)))) {
            let centroid = if own_layout {
                Some(node.label.centroid)
            } else {
                let pos: Vec<(f64, f64)> = node
                    .members
                    .iter()
                    .filter_map(|m| index.get(m))
                    .map(|&i| (layout.points[i].x, layout.points[i].y))
                    .collect();
                (!pos.is_empty()).then(|| {
                    let n = pos.len() as f64;
                    (pos.iter().map(|p| p.0).sum::<f64>() / n, pos.iter().map(|p| p.1).sum::<f64>() / n)
                })
            };
            if let Some((x, y)) = centroid {
                out.push(ViewLabel {
                    topic_id: node.label.topic_id,
                    label: node.label.label.clone(),
                    x,
                    y,
                    frequency: node.label.frequency,
                    min_zoom: node.label.min_zoom,
                    parent,
                });
            }
        }
    }
    out
}

/// Smoothed point counts on a square grid over a box.
struct DensityGrid {
    n: usize,
    bbox: BBox,
    values: Vec<f64>,
}

impl DensityGrid {
    fn build(points: &[(f64, f64)], bbox: BBox, n: usize) -> Self {
        let mut counts = vec![0.0; n * n];
        let mut grid = DensityGrid { n, bbox, values: Vec::new() };
        for &(x, y) in points {
            let (i, j) = grid.cell(x, y);
            counts[j * n + i] += 1.0;
        }
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let mut sum = 0.0;
                for dj in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                    for di in i.saturating_sub(1)..=(i + 1).min(n - 1) {
                        sum += counts[dj * n + di];
                    }
                }
                values[j * n + i] = sum / 9.0;
            }
        }
        grid.values = values;
        grid
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = (x - self.bbox.xmin) / (self.bbox.xmax - self.bbox.xmin);
        let fy = (y - self.bbox.ymin) / (self.bbox.ymax - self.bbox.ymin);
        let clamp = |f: f64| ((f * self.n as f64).floor().max(0.0) as usize).min(self.n - 1);
        (clamp(fx), clamp(fy))
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (i, j) = self.cell(x, y);
        self.values[j * self.n + i]
    }

    fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Value at padded vertex `(i, j)`; the one-cell border is zero so every
    /// contour closes.
    fn padded(&self, i: usize, j: usize) -> f64 {
        if i == 0 || j == 0 || i > self.n || j > self.n {
            0.0
        } else {
            self.values[(j - 1) * self.n + (i - 1)]
        }
    }

    fn vertex_pos(&self, i: usize, j: usize) -> (f64, f64) {
        let cw = (self.bbox.xmax - self.bbox.xmin) / self.n as f64;
        let ch = (self.bbox.ymax - self.bbox.ymin) / self.n as f64;
        (self.bbox.xmin + (i as f64 - 0.5) * cw, self.bbox.ymin + (j as f64 - 0.5) * ch)
    }
}

/// A grid edge: horizontal from `(i, j)` to `(i+1, j)` or vertical from
/// `(i, j)` to `(i, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

fn crossing(grid: &DensityGrid, e: Edge, level: f64) -> [f64; 2] {
    let (a, b) = match e {
        Edge::H(i, j) => ((i, j), (i + 1, j)),
        Edge::V(i, j) => ((i, j), (i, j + 1)),
    };
    let (va, vb) = (grid.padded(a.0, a.1), grid.padded(b.0, b.1));
    let t = if vb != va { ((level - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
    let (pa, pb) = (grid.vertex_pos(a.0, a.1), grid.vertex_pos(b.0, b.1));
    [pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)]
}

/// Marching squares at one level, with segments chained into polylines.
fn iso_lines(grid: &DensityGrid, level: f64) -> Vec<Vec<[f64; 2]>> {
    let m = grid.n + 2;
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..m - 1 {
        for i in 0..m - 1 {
            let a = grid.padded(i, j);
            let b = grid.padded(i + 1, j);
            let c = grid.padded(i + 1, j + 1);
            let d = grid.padded(i, j + 1);
            let case = (a >= level) as u8 | ((b >= level) as u8) << 1 | ((c >= level) as u8) << 2 | ((d >= level) as u8) << 3;
            let (bottom, right, top, left) = (Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j));
            let centre_high = (a + b + c + d) / 4.0 >= level;
            match case {
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 if centre_high => segments.extend([(bottom, right), (top, left)]),
                5 => segments.extend([(left, bottom), (right, top)]),
                10 if centre_high => segments.extend([(left, bottom), (right, top)]),
                10 => segments.extend([(bottom, right), (top, left)]),
                _ => {}
            }
        }
    }

    let mut at: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (e1, e2)) in segments.iter().enumerate() {
        at.entry(*e1).or_default().push(k);
        at.entry(*e2).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut paths = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, second) = segments[start];
        let mut chain = vec![first, second];
        for forward in [true, false] {
            loop {
                let tip = if forward { *chain.last().unwrap() } else { chain[0] };
                let next = at[&tip].iter().copied().find(|&k| !used[k]);
                let Some(k) = next else { break };
                used[k] = true;
                let (e1, e2) = segments[k];
                let other = if e1 == tip { e2 } else { e1 };
                if forward {
                    chain.push(other);
                } else {
                    chain.insert(0, other);
                }
            }
        }
        paths.push(chain.into_iter().map(|e| crossing(grid, e, level)).collect());
    }
    paths
}

fn contours(grid: &DensityGrid) -> Vec<Contour> {
    let peak = grid.peak();
    if peak <= 0.0 {
        return Vec::new();
    }
    CONTOUR_FRACTIONS
        .iter()
        .map(|f| f * peak)
        .map(|level| Contour { level, paths: iso_lines(grid, level) })
        .filter(|c| !c.paths.is_empty())
        .collect()
}

/// Answers a viewport query against `layout`.
///
/// Points are filtered by box, platform and watch time. When more than
/// `max_points` remain, the response carries density contours and only the
/// `max_points` points in the densest grid cells (ties by watch order).
/// Points are always returned in the layout's order.
pub fn render(
    layout: &Layout2D,
    labels: &[ViewLabel],
    items: &HashMap<EventId, ItemInfo>,
    q: &ViewportQuery,
    levels: u32,
) -> MapView {
    let bbox = q.bbox.unwrap_or_else(|| BBox::extent(layout.points.iter().map(|p| (p.x, p.y))));
    let candidates: Vec<usize> = layout
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p.x, p.y))
        .filter(|(_, p)| q.platforms.as_ref().is_none_or(|s| s.contains(&p.platform)))
        .filter(|(_, p)| q.until.is_none_or(|t| p.watched_at <= t))
        .map(|(i, _)| i)
        .collect();
    let total = candidates.len();
    let thinned = total > q.max_points;
    let (kept, contour_lines) = if thinned {
        let pos: Vec<(f64, f64)> = candidates.iter().map(|&i| (layout.points[i].x, layout.points[i].y)).collect();
        let grid = DensityGrid::build(&pos, bbox, DENSITY_GRID);
        let mut ranked: Vec<(f64, usize)> = candidates.iter().zip(&pos).map(|(&i, &(x, y))| (grid.at(x, y), i)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<usize> = ranked.into_iter().take(q.max_points).map(|(_, i)| i).collect();
        kept.sort_unstable();
        (kept, contours(&grid))
    } else {
        (candidates, Vec::new())
    };

    let lod = lod_for(q.zoom, levels);
    let points = kept
        .into_iter()
        .map(|i| {
            let p = &layout.points[i];
            let info = items.get(&p.item_id);
            ViewPoint {
                item_id: p.item_id.clone(),
                x: p.x,
                y: p.y,
                platform: p.platform,
                watched_at: p.watched_at,
                topic_id: p.topic_id,
                lod,
                title: (lod >= Lod::Title).then(|| info.map(|i| i.title.clone())).flatten(),
                thumbnail_url: (lod == Lod::Thumbnail).then(|| info.and_then(|i| i.thumbnail_url.clone())).flatten(),
            }
        })
        .collect();
    let labels = labels.iter().filter(|l| l.min_zoom <= q.zoom && bbox.contains(l.x, l.y)).cloned().collect();
    MapView {
        layout_id: layout.layout_id.clone(),
        kind: layout.kind,
        bbox: bbox.as_array(),
        zoom: q.zoom,
        total,
        thinned,
        points,
        labels,
        contours: contour_lines,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lod_thresholds() {
        let got: Vec<Lod> = (0..6).map(|z| lod_for(z, 6)).collect();
        assert_eq!(got, [Lod::Dot, Lod::Dot, Lod::Dot, Lod::Title, Lod::Title, Lod::Thumbnail]);
        assert_eq!(lod_for(0, 1), Lod::Thumbnail);
    }

    #[test]
    fn bbox_parsing() {
        assert_eq!(BBox::parse("0,1,2,3").unwrap(), BBox { xmin: 0.0, ymin: 1.0, xmax: 2.0, ymax: 3.0 });
        for bad in ["0,0,0,1", "1,2,3", "a,b,c,d", "0,0,inf,1", "2,0,1,1"] {
            assert_eq!(BBox::parse(bad), Err(QueryError::BadBBox), "{bad}");
        }
    }

    #[test]
    fn query_validation() {
        let q = RawMapQuery { zoom: Some(6), ..Default::default() };
        assert_eq!(q.resolve(6, 10), Err(QueryError::ZoomOutOfRange { zoom: 6, max: 5 }));
        let q = RawMapQuery { platforms: Some("netflix,vimeo".into()), ..Default::default() };
        assert_eq!(q.resolve(6, 10), Err(QueryError::BadPlatform("vimeo".into())));
        let q = RawMapQuery { platforms: Some("netflix, tiktok".into()), until: Some("2024-01-01T00:00:00Z".into()), ..Default::default() };
        let r = q.resolve(6, 10).unwrap();
        assert_eq!(r.platforms.unwrap().len(), 2);
        assert_eq!(r.max_points, 10);
        assert!(RawMapQuery { max_points: Some(0), ..Default::default() }.resolve(6, 10).is_err());
    }

    fn blob_grid(points: &[(f64, f64)]) -> DensityGrid {
        DensityGrid::build(points, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 16)
    }

    #[test]
    fn single_blob_gives_one_closed_loop_per_level() {
        let pts: Vec<(f64, f64)> = (0..100).map(|k| (0.5 + (k % 10) as f64 * 0.005, 0.5 + (k / 10) as f64 * 0.005)).collect();
        let grid = blob_grid(&pts);
        let cs = contours(&grid);
        assert!(!cs.is_empty());
        for c in &cs {
            assert_eq!(c.paths.len(), 1, "level {}", c.level);
            let path = &c.paths[0];
            assert_eq!(path.first(), path.last());
            assert!(path.iter().all(|p| p[0] > 0.3 && p[0] < 0.7 && p[1] > 0.3 && p[1] < 0.7));
        }
    }

    #[test]
    fn separate_blobs_give_separate_loops() {
        let mut pts = Vec::new();
        for k in 0..50 {
            pts.push((0.2 + (k % 5) as f64 * 0.004, 0.2 + (k / 5) as f64 * 0.004));
            pts.push((0.8 + (k % 5) as f64 * 0.004, 0.8 + (k / 5) as f64 * 0.004));
        }
        let cs = contours(&blob_grid(&pts));
        assert_eq!(cs[0].paths.len(), 2);
    }

    #[test]
    fn empty_grid_has_no_contours() {
        assert!(contours(&blob_grid(&[])).is_empty());
    }
}
