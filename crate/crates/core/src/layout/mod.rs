//! 2D layouts: the UMAP semantic map, the topic grid and semantic axes.

mod axes;
mod curve;
mod fuzzy;
mod grid;
mod knn;
mod optimize;
mod spectral;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{EventId, HarmonizedItem, MapPoint, Platform};

pub use axes::{semantic_axes_layout, Axis};
pub use curve::{find_ab_params, fit_rmse, fit_samples, kernel, target_curve};
pub use fuzzy::{fuzzy_simplicial_set, smooth_knn_scale, Edge, FuzzyGraph, LocalScale, SIGMA_MAX, SIGMA_MIN, SIGMA_TOL};
pub use grid::{grid_layout, GridCell, NOISE_CELL_LABEL};
pub use knn::{approximate_knn, brute_force_knn, knn_graph, Metric, NeighborGraph, VectorSet, BRUTE_FORCE_MAX};
pub use optimize::{epochs_per_sample, optimize_layout, SgdParams};
pub use spectral::{components, random_init, spectral_init};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("need more than {k} points for {k} neighbors, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
    #[error("axis concept must not be empty")]
    EmptyConcept,
    #[error("could not embed axis concept: {0}")]
    ConceptEmbedFailed(String),
    #[error("{points} points but {vectors} vectors")]
    LengthMismatch { points: usize, vectors: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Spectral,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// `None` picks 500 epochs up to 10,000 points and 200 above.
    pub n_epochs: Option<usize>,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub seed: u64,
    pub init: InitKind,
    pub metric: Metric,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: None,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            seed: 42,
            init: InitKind::Spectral,
            metric: Metric::Cosine,
        }
    }
}

pub const LARGE_DATASET: usize = 10_000;

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: &str| Err(LayoutError::InvalidConfig(m.to_string()));
        if self.n_neighbors < 2 {
            return bad("n_neighbors must be at least 2");
        }
        if !(self.min_dist > 0.0 && self.min_dist <= 1.0) {
            return bad("min_dist must lie in (0, 1]");
        }
        if self.spread <= 0.0 || self.min_dist > self.spread {
            return bad("spread must be positive and at least min_dist");
        }
        if self.n_epochs == Some(0) {
            return bad("n_epochs must be at least 1");
        }
        if self.negative_sample_rate == 0 || self.learning_rate <= 0.0 {
            return bad("negative_sample_rate and learning_rate must be positive");
        }
        Ok(())
    }

    pub fn epochs_for(&self, n: usize) -> usize {
        self.n_epochs.unwrap_or(if n <= LARGE_DATASET { 500 } else { 200 })
    }
}

/// UMAP embedding of `points` into the plane.
///
/// One point sits at the origin and two points at `(±1, 0)`. With fewer than
/// `n_neighbors + 1` points, `k` shrinks to `n - 1`.
pub fn umap(points: &VectorSet, cfg: &LayoutConfig) -> Result<Vec<[f64; 2]>, LayoutError> {
    cfg.validate()?;
    let n = points.len();
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![[0.0, 0.0]]),
        2 => return Ok(vec![[-1.0, 0.0], [1.0, 0.0]]),
        _ => {}
    }
    let k = cfg.n_neighbors.min(n - 1);
    let graph = knn_graph(points, k, cfg.metric, cfg.seed)?;
    let fuzzy = fuzzy_simplicial_set(&graph);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords = match cfg.init {
        InitKind::Spectral => spectral_init(&fuzzy, &mut rng),
        InitKind::Random => random_init(n, &mut rng),
    };
    rescale_to_box(&mut coords, 10.0);
    let (a, b) = find_ab_params(cfg.spread, cfg.min_dist);
    let params = SgdParams {
        a,
        b,
        n_epochs: cfg.epochs_for(n),
        learning_rate: cfg.learning_rate,
        negative_sample_rate: cfg.negative_sample_rate,
        repulsion_strength: 1.0,
    };
    optimize_layout(&mut coords, &fuzzy, &params, &mut rng);
    Ok(coords)
}

/// Maps each axis independently onto `[0, size]`.
fn rescale_to_box(coords: &mut [[f64; 2]], size: f64) {
    for d in 0..2 {
        let (lo, hi) = coords.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p[d]), h.max(p[d])));
        let span = hi - lo;
        for p in coords.iter_mut() {
            p[d] = if span > 0.0 { size * (p[d] - lo) / span } else { size / 2.0 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    SemanticMap,
    Grid,
    SemanticAxes,
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::SemanticMap => "semantic_map",
            LayoutKind::Grid => "grid",
            LayoutKind::SemanticAxes => "semantic_axes",
        }
    }
}

/// Identity of one point, independent of where a layout puts it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointInfo {
    pub item_id: EventId,
    pub platform: Platform,
    pub watched_at: DateTime<Utc>,
}

impl From<&HarmonizedItem> for PointInfo {
    fn from(h: &HarmonizedItem) -> Self {
        PointInfo { item_id: h.id().clone(), platform: h.item.event.platform, watched_at: h.item.event.watched_at }
    }
}

impl PointInfo {
    fn at(&self, x: f64, y: f64) -> MapPoint {
        MapPoint { item_id: self.item_id.clone(), x, y, platform: self.platform, watched_at: self.watched_at, topic_id: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout2D {
    pub layout_id: String,
    pub kind: LayoutKind,
    pub points: Vec<MapPoint>,
    pub config: LayoutConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_concepts: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_cells: Option<Vec<GridCell>>,
    /// Axes whose values were all equal and were pinned at 0.5.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_axes: Vec<String>,
}

impl Layout2D {
    pub fn is_valid(&self) -> bool {
        self.points.iter().all(|p| p.x.is_finite() && p.y.is_finite())
            && (self.kind != LayoutKind::SemanticAxes || self.axis_concepts.is_some())
    }
}

/// Stable id from the layout kind, its parameters and the input ids.
pub fn layout_id(kind: LayoutKind, params: &str, ids: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_str());
    h.update([0x1f]);
    h.update(params);
    for id in ids {
        h.update([0x1f]);
        h.update(id.as_ref());
    }
    format!("{}-{}", kind.as_str(), hex::encode(&h.finalize()[..8]))
}

/// UMAP layout of embedded items.
pub fn semantic_map(points: &[PointInfo], vectors: &VectorSet, cfg: &LayoutConfig) -> Result<Layout2D, LayoutError> {
    if points.len() != vectors.len() {
        return Err(LayoutError::LengthMismatch { points: points.len(), vectors: vectors.len() });
    }
    let coords = umap(vectors, cfg)?;
    let params = serde_json::to_string(cfg).expect("config serializes");
    Ok(Layout2D {
        layout_id: layout_id(LayoutKind::SemanticMap, &params, points.iter().map(|p| p.item_id.as_str())),
        kind: LayoutKind::SemanticMap,
        points: points.iter().zip(&coords).map(|(p, c)| p.at(c[0], c[1])).collect(),
        config: cfg.clone(),
        axis_concepts: None,
        grid_cells: None,
        degenerate_axes: Vec::new(),
    })
}
