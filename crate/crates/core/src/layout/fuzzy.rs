use super::knn::NeighborGraph;

pub const SIGMA_MIN: f64 = 1e-12;
pub const SIGMA_MAX: f64 = 1e6;
pub const SIGMA_TOL: f64 = 1e-5;
pub const SIGMA_MAX_ITER: usize = 64;

/// Per-point local scale: `rho` is the nearest-neighbor distance and `sigma`
/// solves `Σ_j exp(-max(0, d_j - rho) / sigma) = log2(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalScale {
    pub rho: f64,
    pub sigma: f64,
}

fn membership_sum(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Bisection for one point's `sigma` on `[SIGMA_MIN, SIGMA_MAX]`.
pub fn smooth_knn_scale(distances: &[f64]) -> LocalScale {
    let rho = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let rho = if rho.is_finite() { rho } else { 0.0 };
    let target = (distances.len() as f64).log2();
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let mut sigma = 1.0f64.clamp(lo, hi);
    for _ in 0..SIGMA_MAX_ITER {
        let psum = membership_sum(distances, rho, sigma);
        if (psum - target).abs() < SIGMA_TOL {
            break;
        }
        if psum > target {
            hi = sigma;
        } else {
            lo = sigma;
        }
        sigma = (lo + hi) / 2.0;
    }
    LocalScale { rho, sigma }
}

/// Undirected weighted edge, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    pub w: f64,
}

/// Symmetrized membership graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub scales: Vec<LocalScale>,
}

/// Directed memberships `w_{i→j} = exp(-max(0, d_ij - rho_i) / sigma_i)`
/// combined by probabilistic OR: `w_ij = a + b - a·b`. Zero weights are
/// dropped; edges come out sorted by `(i, j)`.
pub fn fuzzy_simplicial_set(graph: &NeighborGraph) -> FuzzyGraph {
    let scales: Vec<LocalScale> = (0..graph.n).map(|i| smooth_knn_scale(graph.neighbor_distances(i))).collect();
    let mut directed: Vec<(u32, u32, f64)> = Vec::with_capacity(graph.n * graph.k);
    for (i, scale) in scales.iter().enumerate() {
        for (&j, &d) in graph.neighbors(i).iter().zip(graph.neighbor_distances(i)) {
            let w = (-(d - scale.rho).max(0.0) / scale.sigma).exp();
            if j as usize != i {
                directed.push((i as u32, j, w));
            }
        }
    }
    // Both directions of a pair land next to each other once keyed by the
    // unordered pair.
    let mut keyed: Vec<(u32, u32, f64)> =
        directed.into_iter().map(|(i, j, w)| if i < j { (i, j, w) } else { (j, i, w) }).collect();
    keyed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    let mut edges = Vec::with_capacity(keyed.len());
    let mut idx = 0;
    while idx < keyed.len() {
        let (i, j, a) = keyed[idx];
        let mut w = a;
        if idx + 1 < keyed.len() && keyed[idx + 1].0 == i && keyed[idx + 1].1 == j {
            let b = keyed[idx + 1].2;
            w = a + b - a * b;
            idx += 1;
        }
        idx += 1;
        if w > 0.0 {
            edges.push(Edge { i, j, w: w.min(1.0) });
        }
    }
    FuzzyGraph { n: graph.n, edges, scales }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::knn::{brute_force_knn, Metric, VectorSet};

    #[test]
    fn nearest_neighbor_weight_is_one() {
        let pts = VectorSet::from_rows(&[[0.0f32], [1.0], [3.0], [7.0], [12.0]]);
        let g = brute_force_knn(&pts, 3, Metric::Euclidean).unwrap();
        let f = fuzzy_simplicial_set(&g);
        let w01 = f.edges.iter().find(|e| e.i == 0 && e.j == 1).unwrap().w;
        assert_eq!(w01, 1.0);
        assert!(f.edges.iter().all(|e| e.w > 0.0 && e.w <= 1.0 && e.i < e.j));
    }

    #[test]
    fn probabilistic_or_identity() {
        let pts = VectorSet::from_rows(&[[0.0f32], [1.0]]);
        let g = brute_force_knn(&pts, 1, Metric::Euclidean).unwrap();
        let f = fuzzy_simplicial_set(&g);
        assert_eq!(f.edges, vec![Edge { i: 0, j: 1, w: 1.0 }]);
    }

    #[test]
    fn sigma_meets_target() {
        let d = [0.5, 0.9, 1.4, 2.0];
        let s = smooth_knn_scale(&d);
        assert!((membership_sum(&d, s.rho, s.sigma) - 2.0).abs() < SIGMA_TOL);
    }

    #[test]
    fn all_duplicate_neighbors_clamp_to_min() {
        let s = smooth_knn_scale(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.rho, 0.0);
        assert!(s.sigma < 1e-6);
    }
}
