//! Initial coordinates from the graph's spectrum.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fuzzy::FuzzyGraph;

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-7;
/// Half-width of the box each component's initial layout is scaled into.
const BOX: f64 = 10.0;
/// Components smaller than this get random positions in their box.
const MIN_SPECTRAL: usize = 4;

pub fn random_init(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(-BOX..BOX), rng.random_range(-BOX..BOX)]).collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components ordered by size (largest first), ties by smallest
/// member; members ascending.
pub fn components(graph: &FuzzyGraph) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..graph.n).collect();
    for e in &graph.edges {
        let (a, b) = (find(&mut parent, e.i as usize), find(&mut parent, e.j as usize));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..graph.n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

/// Spectral layout per connected component; components are scaled into
/// equal boxes tiled on a near-square grid.
pub fn spectral_init(graph: &FuzzyGraph, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let comps = components(graph);
    let mut out = vec![[0.0, 0.0]; graph.n];
    let cols = (comps.len() as f64).sqrt().ceil().max(1.0) as usize;
    let mut local = vec![usize::MAX; graph.n];
    for (c, members) in comps.iter().enumerate() {
        for (li, &g) in members.iter().enumerate() {
            local[g] = li;
        }
        let coords = if members.len() >= MIN_SPECTRAL {
            component_spectrum(graph, members, &local, rng)
        } else {
            members.iter().map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
        };
        let scale = coords.iter().flat_map(|p| p.iter().map(|v| v.abs())).fold(0.0f64, f64::max);
        let factor = if scale > 0.0 { BOX / scale } else { 1.0 };
        let (cx, cy) = if comps.len() == 1 {
            (0.0, 0.0)
        } else {
            ((c % cols) as f64 * 2.5 * BOX, -((c / cols) as f64) * 2.5 * BOX)
        };
        for (li, &g) in members.iter().enumerate() {
            out[g] = [cx + coords[li][0] * factor, cy + coords[li][1] * factor];
        }
    }
    for p in &mut out {
        p[0] += rng.random_range(-1e-4..1e-4);
        p[1] += rng.random_range(-1e-4..1e-4);
    }
    out
}

/// Two leading non-trivial eigenvectors of `D^{-1/2} W D^{-1/2}` by
/// subspace power iteration on the shifted operator `(A + I) / 2`, with the
/// trivial `D^{1/2}·1` direction deflated.
fn component_spectrum(graph: &FuzzyGraph, members: &[usize], local: &[usize], rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let m = members.len();
    let member_set: Vec<bool> = {
        let mut s = vec![false; graph.n];
        for &g in members {
            s[g] = true;
        }
        s
    };
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter(|e| member_set[e.i as usize])
        .map(|e| (local[e.i as usize], local[e.j as usize], e.w))
        .collect();
    let mut degree = vec![0.0f64; m];
    for &(i, j, w) in &edges {
        degree[i] += w;
        degree[j] += w;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut trivial: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
    normalize(&mut trivial);

    let apply = |x: &[f64], y: &mut [f64]| {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = 0.5 * xi;
        }
        for &(i, j, w) in &edges {
            let a = 0.5 * w * inv_sqrt[i] * inv_sqrt[j];
            y[i] += a * x[j];
            y[j] += a * x[i];
        }
    };

    let mut basis: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut basis, &trivial);
    let mut next = vec![vec![0.0; m]; 2];
    for _ in 0..MAX_ITER {
        for c in 0..2 {
            apply(&basis[c], &mut next[c]);
        }
        orthonormalize(&mut next, &trivial);
        let mut change = 0.0f64;
        for c in 0..2 {
            let sign = if dot(&basis[c], &next[c]) < 0.0 { -1.0 } else { 1.0 };
            let diff = basis[c].iter().zip(&next[c]).map(|(a, b)| (a - sign * b).powi(2)).sum::<f64>().sqrt();
            change = change.max(diff);
        }
        std::mem::swap(&mut basis, &mut next);
        if change < TOL {
            break;
        }
    }
    (0..m).map(|i| [basis[0][i], basis[1][i]]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Gram–Schmidt against the deflated direction and earlier columns.
fn orthonormalize(cols: &mut [Vec<f64>], trivial: &[f64]) {
    for c in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(c);
        let v = &mut rest[0];
        for q in std::iter::once(trivial).chain(done.iter().map(|x| x.as_slice())) {
            let p = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        normalize(v);
    }
}
