use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{layout_id, Layout2D, LayoutConfig, LayoutKind};
use crate::model::{MapPoint, TopicId, TopicLabel};

pub const NOISE_CELL_LABEL: &str = "unclustered";
const GAP: f64 = 0.2;

/// One topic's cell in the grid layout; unit square at `(x, y)` (lower left).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub topic_id: Option<TopicId>,
    pub label: String,
    pub col: usize,
    pub row: usize,
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

/// Topics (by their member points' `topic_id`) laid out as cells of a
/// near-square grid, largest topic first with ties broken by label. Inside a
/// cell, items fill a square sub-grid row by row in watch order. Unclustered
/// points take a final cell. Topics in `exclude` and their points are left
/// out entirely, so the result equals the grid of the reduced input.
pub fn grid_layout(points: &[MapPoint], labels: &[TopicLabel], exclude: &BTreeSet<TopicId>) -> Layout2D {
    let label_of: BTreeMap<TopicId, &str> = labels.iter().map(|l| (l.topic_id, l.label.as_str())).collect();
    let mut groups: BTreeMap<Option<TopicId>, Vec<&MapPoint>> = BTreeMap::new();
    for p in points {
        if p.topic_id.is_some_and(|t| exclude.contains(&t)) {
            continue;
        }
        groups.entry(p.topic_id).or_default().push(p);
    }
    let noise = groups.remove(&None);
    let mut cells: Vec<(Option<TopicId>, String, Vec<&MapPoint>)> = groups
        .into_iter()
        .map(|(t, members)| {
            let id = t.expect("noise removed");
            let label = label_of.get(&id).map_or_else(|| format!("topic {id}"), |s| s.to_string());
            (t, label, members)
        })
        .collect();
    cells.sort_by(|a, b| b.2.len().cmp(&a.2.len()).then_with(|| a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    if let Some(members) = noise {
        cells.push((None, NOISE_CELL_LABEL.to_string(), members));
    }

    let n_cells = cells.len();
    let cols = (n_cells as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n_cells.div_ceil(cols).max(1);
    let pitch = 1.0 + GAP;
    let mut placed: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut grid_cells = Vec::with_capacity(n_cells);
    for (c, (topic, label, mut members)) in cells.into_iter().enumerate() {
        let (col, row) = (c % cols, c / cols);
        let (x0, y0) = (col as f64 * pitch, (rows - 1 - row) as f64 * pitch);
        members.sort_by(|a, b| (a.watched_at, &a.item_id).cmp(&(b.watched_at, &b.item_id)));
        let side = (members.len() as f64).sqrt().ceil().max(1.0) as usize;
        for (m, p) in members.iter().enumerate() {
            let (sc, sr) = (m % side, m / side);
            let x = x0 + (sc as f64 + 0.5) / side as f64;
            let y = y0 + 1.0 - (sr as f64 + 0.5) / side as f64;
            placed.insert(p.item_id.as_str(), (x, y));
        }
        grid_cells.push(GridCell { topic_id: topic, label, col, row, x: x0, y: y0, count: members.len() });
    }

    let out: Vec<MapPoint> = points
        .iter()
        .filter_map(|p| {
            let &(x, y) = placed.get(p.item_id.as_str())?;
            Some(MapPoint { x, y, ..p.clone() })
        })
        .collect();
    let params = format!("exclude={exclude:?}");
    Layout2D {
        layout_id: layout_id(LayoutKind::Grid, &params, out.iter().map(|p| p.item_id.as_str())),
        kind: LayoutKind::Grid,
        points: out,
        config: LayoutConfig::default(),
        axis_concepts: None,
        grid_cells: Some(grid_cells),
        degenerate_axes: Vec::new(),
    }
}
