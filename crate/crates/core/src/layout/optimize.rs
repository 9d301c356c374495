//! Stochastic gradient descent on the fuzzy cross-entropy surrogate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fuzzy::FuzzyGraph;

const CLIP: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
pub struct SgdParams {
    pub a: f64,
    pub b: f64,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub repulsion_strength: f64,
}

fn clip(v: f64) -> f64 {
    v.clamp(-CLIP, CLIP)
}

/// Epochs between samples of each edge: an edge of maximum weight is sampled
/// every epoch, lighter edges proportionally less often; `-1` never.
pub fn epochs_per_sample(weights: &[f64], n_epochs: usize) -> Vec<f64> {
    let max = weights.iter().copied().fold(0.0, f64::max);
    weights
        .iter()
        .map(|&w| {
            let n_samples = n_epochs as f64 * (w / max);
            if n_samples > 0.0 {
                n_epochs as f64 / n_samples
            } else {
                -1.0
            }
        })
        .collect()
}

/// Optimizes `embedding` in place. Each undirected edge is visited in both
/// directions, both endpoints move, and all randomness comes from `rng` in a
/// fixed serial order, so equal inputs give bitwise-equal output.
pub fn optimize_layout(embedding: &mut [[f64; 2]], graph: &FuzzyGraph, params: &SgdParams, rng: &mut ChaCha8Rng) {
    let n = embedding.len();
    if n < 2 || graph.edges.is_empty() || params.n_epochs == 0 {
        return;
    }
    // Edges too weak to be sampled even once over the run are dropped.
    let max_w = graph.edges.iter().map(|e| e.w).fold(0.0, f64::max);
    let floor = max_w / params.n_epochs as f64;
    let mut head = Vec::with_capacity(graph.edges.len() * 2);
    let mut tail = Vec::with_capacity(graph.edges.len() * 2);
    let mut weights = Vec::with_capacity(graph.edges.len() * 2);
    for e in graph.edges.iter().filter(|e| e.w >= floor) {
        head.push(e.i as usize);
        tail.push(e.j as usize);
        weights.push(e.w);
        head.push(e.j as usize);
        tail.push(e.i as usize);
        weights.push(e.w);
    }
    let eps = epochs_per_sample(&weights, params.n_epochs);
    let mut next_sample = eps.clone();
    let eps_neg: Vec<f64> = eps.iter().map(|&e| e / params.negative_sample_rate as f64).collect();
    let mut next_neg = eps_neg.clone();
    let (a, b) = (params.a, params.b);

    for epoch in 0..params.n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / params.n_epochs as f64);
        let e = epoch as f64;
        for edge in 0..head.len() {
            if eps[edge] <= 0.0 || next_sample[edge] > e {
                continue;
            }
            let (j, k) = (head[edge], tail[edge]);
            let (cur, oth) = (embedding[j], embedding[k]);
            let dist2 = (cur[0] - oth[0]).powi(2) + (cur[1] - oth[1]).powi(2);
            let coeff = if dist2 > 0.0 {
                let pb = dist2.powf(b);
                -2.0 * a * b * (pb / dist2) / (a * pb + 1.0)
            } else {
                0.0
            };
            for d in 0..2 {
                let g = clip(coeff * (cur[d] - oth[d]));
                embedding[j][d] += g * alpha;
                embedding[k][d] -= g * alpha;
            }
            next_sample[edge] += eps[edge];

            let n_neg = ((e - next_neg[edge]) / eps_neg[edge]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let cur = embedding[j];
                let oth = embedding[k];
                let dist2 = (cur[0] - oth[0]).powi(2) + (cur[1] - oth[1]).powi(2);
                if dist2 <= 0.0 {
                    continue;
                }
                let coeff =
                    2.0 * params.repulsion_strength * b / ((0.001 + dist2) * (a * dist2.powf(b) + 1.0));
                for d in 0..2 {
                    let g = clip(coeff * (cur[d] - oth[d]));
                    embedding[j][d] += g * alpha;
                }
            }
            next_neg[edge] += n_neg as f64 * eps_neg[edge];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_schedule() {
        assert_eq!(epochs_per_sample(&[1.0, 0.5, 0.0], 100), vec![1.0, 2.0, -1.0]);
    }
}
