//! k-nearest-neighbor graphs: exact for small inputs, random-projection
//! forest plus neighbor descent above [`BRUTE_FORCE_MAX`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LayoutError;

pub const BRUTE_FORCE_MAX: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// Row-major matrix of `n` vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    d: usize,
    data: Vec<f32>,
    norms: Vec<f32>,
}

impl VectorSet {
    pub fn new(d: usize, data: Vec<f32>) -> Self {
        assert!(d > 0 && data.len().is_multiple_of(d), "data length must be a multiple of d");
        let norms = data.chunks_exact(d).map(|r| dot(r, r).sqrt()).collect();
        VectorSet { d, data, norms }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let d = rows.first().map_or(1, |r| r.as_ref().len().max(1));
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            assert_eq!(r.as_ref().len(), d, "all rows must share one dimension");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(d, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, metric: Metric, i: usize, j: usize) -> f32 {
        let (a, b) = (self.row(i), self.row(j));
        match metric {
            Metric::Cosine => {
                let denom = self.norms[i] * self.norms[j];
                if denom == 0.0 {
                    return if self.norms[i] == self.norms[j] { 0.0 } else { 1.0 };
                }
                (1.0 - dot(a, b) / denom).max(0.0)
            }
            Metric::Euclidean => sq_dist(a, b).sqrt(),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let tail: f32 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for l in 0..8 {
            let t = ca[l] - cb[l];
            acc[l] += t * t;
        }
    }
    let tail: f32 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| (x - y) * (x - y)).sum();
    acc.iter().sum::<f32>() + tail
}

/// `k` neighbors per point, each row sorted by `(distance, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Exact kNN below the brute-force threshold, approximate above it.
pub fn knn_graph(points: &VectorSet, k: usize, metric: Metric, seed: u64) -> Result<NeighborGraph, LayoutError> {
    if points.len() <= BRUTE_FORCE_MAX {
        brute_force_knn(points, k, metric)
    } else {
        approximate_knn(points, k, metric, seed)
    }
}

fn check_k(n: usize, k: usize) -> Result<(), LayoutError> {
    if k == 0 || n < k + 1 {
        return Err(LayoutError::TooFewPoints { n, k });
    }
    Ok(())
}

pub fn brute_force_knn(points: &VectorSet, k: usize, metric: Metric) -> Result<NeighborGraph, LayoutError> {
    let n = points.len();
    check_k(n, k)?;
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    let mut row: Vec<(f32, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| (points.distance(metric, i, j), j as u32)));
        let by = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        row.select_nth_unstable_by(k - 1, by);
        row[..k].sort_unstable_by(by);
        for &(d, j) in &row[..k] {
            indices.push(j);
            distances.push(f64::from(d));
        }
    }
    Ok(NeighborGraph { n, k, indices, distances })
}

/// Bounded max-heap rows stored as sorted arrays (largest distance last).
struct Heaps {
    k: usize,
    idx: Vec<u32>,
    dist: Vec<f32>,
    fresh: Vec<bool>,
}

impl Heaps {
    fn new(n: usize, k: usize) -> Self {
        Heaps { k, idx: vec![u32::MAX; n * k], dist: vec![f32::INFINITY; n * k], fresh: vec![false; n * k] }
    }

    fn push(&mut self, i: usize, j: u32, d: f32) -> bool {
        let base = i * self.k;
        let row = base..base + self.k;
        if d >= self.dist[base + self.k - 1] || self.idx[row.clone()].contains(&j) {
            return false;
        }
        let mut pos = base + self.k - 1;
        while pos > base && (self.dist[pos - 1] > d || (self.dist[pos - 1] == d && self.idx[pos - 1] > j)) {
            self.dist[pos] = self.dist[pos - 1];
            self.idx[pos] = self.idx[pos - 1];
            self.fresh[pos] = self.fresh[pos - 1];
            pos -= 1;
        }
        self.dist[pos] = d;
        self.idx[pos] = j;
        self.fresh[pos] = true;
        true
    }
}

fn rp_tree_leaves(points: &VectorSet, metric: Metric, leaf_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let mut leaves = Vec::new();
    let mut stack: Vec<Vec<u32>> = vec![(0..points.len() as u32).collect()];
    let d = points.dim();
    let mut normal = vec![0f32; d];
    while let Some(node) = stack.pop() {
        if node.len() <= leaf_size {
            leaves.push(node);
            continue;
        }
        let a = node[rng.random_range(0..node.len())] as usize;
        let mut b = node[rng.random_range(0..node.len())] as usize;
        if a == b {
            b = node[(node.iter().position(|&x| x as usize == a).unwrap() + 1) % node.len()] as usize;
        }
        let (ra, rb) = (points.row(a), points.row(b));
        let mut offset = 0f32;
        match metric {
            Metric::Cosine => {
                let (na, nb) = (points.norms[a].max(f32::MIN_POSITIVE), points.norms[b].max(f32::MIN_POSITIVE));
                for t in 0..d {
                    normal[t] = ra[t] / na - rb[t] / nb;
                }
            }
            Metric::Euclidean => {
                for t in 0..d {
                    normal[t] = ra[t] - rb[t];
                    offset -= normal[t] * (ra[t] + rb[t]) / 2.0;
                }
            }
        }
        let mut left = Vec::with_capacity(node.len() / 2);
        let mut right = Vec::with_capacity(node.len() / 2);
        for &p in &node {
            let margin = dot(&normal, points.row(p as usize)) + offset;
            let go_left = if margin == 0.0 { rng.random::<bool>() } else { margin > 0.0 };
            if go_left {
                left.push(p);
            } else {
                right.push(p);
            }
        }
        if left.is_empty() || right.is_empty() {
            let mut all = node;
            all.shuffle(rng);
            right = all.split_off(all.len() / 2);
            left = all;
        }
        stack.push(right);
        stack.push(left);
    }
    leaves
}

/// Random-projection forest seeding followed by neighbor descent.
pub fn approximate_knn(points: &VectorSet, k: usize, metric: Metric, seed: u64) -> Result<NeighborGraph, LayoutError> {
    let n = points.len();
    check_k(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heaps = Heaps::new(n, k);
    let n_trees = (5 + (n as f64).powf(0.25).round() as usize).min(32);
    let leaf_size = (2 * k).max(30);
    for _ in 0..n_trees {
        for leaf in rp_tree_leaves(points, metric, leaf_size, &mut rng) {
            for (x, &p) in leaf.iter().enumerate() {
                for &q in &leaf[x + 1..] {
                    let d = points.distance(metric, p as usize, q as usize);
                    heaps.push(p as usize, q, d);
                    heaps.push(q as usize, p, d);
                }
            }
        }
    }

    let max_candidates = k.max(8);
    let max_iters = ((n as f64).log2().round() as usize).max(5);
    let threshold = (0.001 * (k * n) as f64) as usize;
    let mut new_c: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut old_c: Vec<Vec<u32>> = vec![Vec::new(); n];
    for _ in 0..max_iters {
        for v in new_c.iter_mut().chain(old_c.iter_mut()) {
            v.clear();
        }
        for i in 0..n {
            for s in i * k..(i + 1) * k {
                let j = heaps.idx[s];
                if j == u32::MAX {
                    continue;
                }
                if heaps.fresh[s] {
                    new_c[i].push(j);
                    new_c[j as usize].push(i as u32);
                } else {
                    old_c[i].push(j);
                    old_c[j as usize].push(i as u32);
                }
            }
        }
        for i in 0..n {
            for list in [&mut new_c[i], &mut old_c[i]] {
                list.sort_unstable();
                list.dedup();
                if list.len() > max_candidates {
                    list.shuffle(&mut rng);
                    list.truncate(max_candidates);
                    list.sort_unstable();
                }
            }
        }
        for (i, fresh) in new_c.iter().enumerate() {
            for s in i * k..(i + 1) * k {
                if heaps.fresh[s] && fresh.binary_search(&heaps.idx[s]).is_ok() {
                    heaps.fresh[s] = false;
                }
            }
        }
        let mut updates = 0usize;
        for i in 0..n {
            let (new, old) = (&new_c[i], &old_c[i]);
            for (x, &p) in new.iter().enumerate() {
                for &q in new[x + 1..].iter().chain(old.iter()) {
                    if p == q {
                        continue;
                    }
                    let d = points.distance(metric, p as usize, q as usize);
                    updates += usize::from(heaps.push(p as usize, q, d));
                    updates += usize::from(heaps.push(q as usize, p, d));
                }
            }
        }
        if updates <= threshold {
            break;
        }
    }

    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = i * k..(i + 1) * k;
        if heaps.idx[row.clone()].contains(&u32::MAX) {
            let exact = exact_row(points, metric, i, k);
            indices.extend(exact.iter().map(|p| p.1));
            distances.extend(exact.iter().map(|p| f64::from(p.0)));
        } else {
            indices.extend_from_slice(&heaps.idx[row.clone()]);
            distances.extend(heaps.dist[row].iter().map(|&d| f64::from(d)));
        }
    }
    Ok(NeighborGraph { n, k, indices, distances })
}

fn exact_row(points: &VectorSet, metric: Metric, i: usize, k: usize) -> Vec<(f32, u32)> {
    let mut row: Vec<(f32, u32)> =
        (0..points.len()).filter(|&j| j != i).map(|j| (points.distance(metric, i, j), j as u32)).collect();
    row.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    row.truncate(k);
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(n: usize, d: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let norm = dot(&v, &v).sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        VectorSet::from_rows(&rows)
    }

    #[test]
    fn line_middle_point() {
        let pts = VectorSet::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let g = brute_force_knn(&pts, 2, Metric::Euclidean).unwrap();
        let mut mid: Vec<u32> = g.neighbors(1).to_vec();
        mid.sort();
        assert_eq!(mid, vec![0, 2]);
    }

    #[test]
    fn duplicates_are_mutual_nearest() {
        let pts = VectorSet::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [1.0, 0.0], [-1.0, 0.2]]);
        let g = brute_force_knn(&pts, 1, Metric::Cosine).unwrap();
        assert_eq!(g.neighbors(0), &[2]);
        assert_eq!(g.neighbors(2), &[0]);
        assert_eq!(g.neighbor_distances(0), &[0.0]);
    }

    #[test]
    fn too_few_points() {
        let pts = VectorSet::from_rows(&[[1.0f32], [2.0]]);
        assert_eq!(brute_force_knn(&pts, 2, Metric::Euclidean), Err(LayoutError::TooFewPoints { n: 2, k: 2 }));
    }

    fn recall(approx: &NeighborGraph, exact: &NeighborGraph) -> f64 {
        let mut hit = 0;
        for i in 0..exact.n {
            hit += approx.neighbors(i).iter().filter(|j| exact.neighbors(i).contains(j)).count();
        }
        hit as f64 / (exact.n * exact.k) as f64
    }

    #[test]
    fn approximate_recall_on_random_unit_vectors() {
        let pts = random_unit(500, 16, 1);
        let exact = brute_force_knn(&pts, 15, Metric::Cosine).unwrap();
        let approx = approximate_knn(&pts, 15, Metric::Cosine, 7).unwrap();
        let r = recall(&approx, &exact);
        assert!(r >= 0.9, "recall {r}");
    }

    #[test]
    fn approximate_is_deterministic() {
        let pts = random_unit(300, 8, 2);
        assert_eq!(approximate_knn(&pts, 10, Metric::Euclidean, 3), approximate_knn(&pts, 10, Metric::Euclidean, 3));
    }

    #[test]
    fn rows_are_sorted_without_self() {
        let pts = random_unit(200, 6, 3);
        let g = approximate_knn(&pts, 8, Metric::Cosine, 0).unwrap();
        for i in 0..g.n {
            assert!(!g.neighbors(i).contains(&(i as u32)));
            assert!(g.neighbor_distances(i).windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
