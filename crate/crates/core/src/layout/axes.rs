use serde::{Deserialize, Serialize};

use super::{layout_id, Layout2D, LayoutConfig, LayoutError, LayoutKind, PointInfo, VectorSet};
use crate::embed::{cosine, normalize, EmbeddingProvider};

/// What one axis measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Cosine similarity to the embedded concept text.
    Concept(String),
    /// Watch time, earliest at 0.
    Time,
}

impl Axis {
    pub fn label(&self) -> String {
        match self {
            Axis::Concept(c) => c.trim().to_string(),
            Axis::Time => "time".to_string(),
        }
    }
}

/// Min-max rescales to `[0, 1]`; `None` when every value is equal.
fn rescale(values: &[f64]) -> Option<Vec<f64>> {
    let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    if values.is_empty() || span.is_nan() || span <= 0.0 {
        return None;
    }
    Some(values.iter().map(|v| (v - lo) / span).collect())
}

fn raw_values(axis: &Axis, points: &[PointInfo], vectors: &VectorSet, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>, LayoutError> {
    match axis {
        Axis::Time => {
            let t0 = points.iter().map(|p| p.watched_at).min();
            Ok(points.iter().map(|p| (p.watched_at - t0.expect("non-empty")).num_seconds() as f64).collect())
        }
        Axis::Concept(text) => {
            let concept = provider
                .embed_batch(&[text.trim().to_string()])
                .map_err(|e| LayoutError::ConceptEmbedFailed(e.to_string()))?
                .into_iter()
                .next()
                .ok_or_else(|| LayoutError::ConceptEmbedFailed("no vector returned".into()))?;
            if concept.len() != vectors.dim() {
                return Err(LayoutError::ConceptEmbedFailed(format!(
                    "concept has dimension {}, items have {}",
                    concept.len(),
                    vectors.dim()
                )));
            }
            let concept = normalize(concept).map_err(|e| LayoutError::ConceptEmbedFailed(e.to_string()))?;
            Ok((0..vectors.len()).map(|i| cosine(vectors.row(i), &concept)).collect())
        }
    }
}

/// Places each item by its similarity to two concepts (or time on x), each
/// axis rescaled to `[0, 1]`. An axis whose values are all equal is pinned at
/// 0.5 and listed in `degenerate_axes`.
pub fn semantic_axes_layout(
    points: &[PointInfo],
    vectors: &VectorSet,
    x: &Axis,
    y: &Axis,
    provider: &dyn EmbeddingProvider,
) -> Result<Layout2D, LayoutError> {
    for axis in [x, y] {
        if matches!(axis, Axis::Concept(c) if c.trim().is_empty()) {
            return Err(LayoutError::EmptyConcept);
        }
    }
    if points.len() != vectors.len() {
        return Err(LayoutError::LengthMismatch { points: points.len(), vectors: vectors.len() });
    }
    let mut degenerate = Vec::new();
    let mut coords = Vec::with_capacity(2);
    for (name, axis) in [("x", x), ("y", y)] {
        if points.is_empty() {
            coords.push(Vec::new());
            continue;
        }
        let raw = raw_values(axis, points, vectors, provider)?;
        coords.push(rescale(&raw).unwrap_or_else(|| {
            degenerate.push(name.to_string());
            vec![0.5; raw.len()]
        }));
    }
    let (xl, yl) = (x.label(), y.label());
    let params = format!("{xl}\u{1f}{yl}\u{1f}{}", provider.id());
    Ok(Layout2D {
        layout_id: layout_id(LayoutKind::SemanticAxes, &params, points.iter().map(|p| p.item_id.as_str())),
        kind: LayoutKind::SemanticAxes,
        points: points.iter().enumerate().map(|(i, p)| p.at(coords[0][i], coords[1][i])).collect(),
        config: LayoutConfig::default(),
        axis_concepts: Some((xl, yl)),
        grid_cells: None,
        degenerate_axes: degenerate,
    })
}
