//! Density clustering on 2D map coordinates using mutual reachability
//! distance and excess-of-mass cluster selection.

use std::collections::HashMap;

/// Smallest merge distance used when converting distances to densities.
const MIN_DIST: f64 = 1e-12;

/// Core distance of every point: distance to its `min_samples`-th nearest
/// point, counting the point itself. Points with fewer than that many points
/// within `max_core` get `f64::INFINITY`.
pub fn core_distances(points: &[[f64; 2]], min_samples: usize, max_core: f64) -> Vec<f64> {
    let n = points.len();
    if n == 0 || min_samples == 0 {
        return vec![0.0; n];
    }
    let need = min_samples - 1;
    if need == 0 {
        return vec![0.0; n];
    }
    let cell = if max_core.is_finite() && max_core > 0.0 { max_core } else { f64::INFINITY };
    let (minx, miny) = points.iter().fold((f64::MAX, f64::MAX), |(a, b), p| (a.min(p[0]), b.min(p[1])));
    let key = |p: &[f64; 2]| -> (i64, i64) {
        if cell.is_infinite() {
            (0, 0)
        } else {
            (((p[0] - minx) / cell).floor() as i64, ((p[1] - miny) / cell).floor() as i64)
        }
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let limit2 = max_core * max_core;
    let mut buf = Vec::new();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            buf.clear();
            let (cx, cy) = key(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(members) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in members {
                            if j != i {
                                let d2 = dist2(p, &points[j]);
                                if d2 <= limit2 {
                                    buf.push(d2);
                                }
                            }
                        }
                    }
                }
            }
            if buf.len() < need {
                return f64::INFINITY;
            }
            let (_, kth, _) = buf.select_nth_unstable_by(need - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Minimum spanning tree of `active` points under mutual reachability, by
/// Prim's algorithm. Edges are `(i, j, distance)` in global indices; ties pick
/// the lowest index.
fn mutual_reachability_mst(points: &[[f64; 2]], core: &[f64], active: &[usize]) -> Vec<(usize, usize, f64)> {
    let m = active.len();
    if m < 2 {
        return Vec::new();
    }
    let core2: Vec<f64> = active.iter().map(|&g| core[g] * core[g]).collect();
    let mut best = vec![f64::INFINITY; m];
    let mut from = vec![0usize; m];
    let mut remaining: Vec<usize> = (1..m).collect();
    let mut edges = Vec::with_capacity(m - 1);
    let mut cur = 0usize;
    while !remaining.is_empty() {
        let pc = points[active[cur]];
        let cc = core2[cur];
        let mut pick = 0usize;
        let mut pick_d = f64::INFINITY;
        for (slot, &j) in remaining.iter().enumerate() {
            let d = dist2(&pc, &points[active[j]]).max(cc).max(core2[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = cur;
            }
            if best[j] < pick_d || (best[j] == pick_d && j < remaining[pick]) {
                pick_d = best[j];
                pick = slot;
            }
        }
        let next = remaining.swap_remove(pick);
        edges.push((active[from[next]], active[next], best[next].sqrt()));
        cur = next;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Single-linkage merge: node `n + k` joins `left` and `right` at `dist`.
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

/// A cluster in the condensed tree.
struct Cluster {
    parent: Option<usize>,
    birth: f64,
    stability: f64,
    children: Vec<usize>,
}

/// Density clusters of 2D points. Returns one entry per point: the cluster
/// index, or `None` for noise. Clusters are numbered by their smallest member
/// index. Points whose core distance exceeds `max_core` are noise, and no
/// cluster spans an edge longer than `max_core`.
pub fn cluster_points(points: &[[f64; 2]], min_cluster_size: usize, max_core: f64) -> Vec<Option<usize>> {
    let n = points.len();
    let mcs = min_cluster_size.max(2);
    if n < mcs {
        return vec![None; n];
    }
    let core = core_distances(points, mcs, max_core);
    let active: Vec<usize> = (0..n).filter(|&i| core[i] <= max_core).collect();
    let mut edges: Vec<(usize, usize, f64)> = mutual_reachability_mst(points, &core, &active)
        .into_iter()
        .filter(|e| e.2 <= max_core)
        .collect();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    // Single-linkage dendrogram; union-find roots are dendrogram node ids.
    // Inactive points stay singletons.
    let mut uf = UnionFind::new(2 * n);
    let mut size = vec![1usize; 2 * n];
    let mut merges: Vec<Merge> = Vec::with_capacity(edges.len());
    for &(a, b, d) in &edges {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            continue;
        }
        let node = n + merges.len();
        let s = size[ra] + size[rb];
        merges.push(Merge { left: ra, right: rb, dist: d, size: s });
        size[node] = s;
        uf.parent[ra] = node;
        uf.parent[rb] = node;
    }
    let node_size = |v: usize| if v < n { 1 } else { merges[v - n].size };

    // Condense: each dendrogram root with enough points is a top-level
    // cluster born where the distance cut applies.
    let root_birth = if max_core.is_finite() && max_core > 0.0 { 1.0 / max_core } else { 0.0 };
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut point_cluster: Vec<Option<usize>> = vec![None; n];
    let mut roots: Vec<usize> = Vec::new();
    let mut is_child = vec![false; n + merges.len()];
    for m in &merges {
        is_child[m.left] = true;
        is_child[m.right] = true;
    }
    for (v, &child) in is_child.iter().enumerate() {
        if !child && node_size(v) >= mcs {
            roots.push(v);
        }
    }
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for &r in &roots {
        clusters.push(Cluster { parent: None, birth: root_birth, stability: 0.0, children: Vec::new() });
        stack.push((r, clusters.len() - 1));
    }
    while let Some((v, c)) = stack.pop() {
        if v < n {
            point_cluster[v] = Some(c);
            continue;
        }
        let m = &merges[v - n];
        let lambda = 1.0 / m.dist.max(MIN_DIST);
        let birth = clusters[c].birth;
        let (ls, rs) = (node_size(m.left), node_size(m.right));
        if ls >= mcs && rs >= mcs {
            clusters[c].stability += (lambda - birth) * m.size as f64;
            for child in [m.left, m.right] {
                clusters.push(Cluster { parent: Some(c), birth: lambda, stability: 0.0, children: Vec::new() });
                let id = clusters.len() - 1;
                clusters[c].children.push(id);
                stack.push((child, id));
            }
        } else {
            for (child, cs) in [(m.left, ls), (m.right, rs)] {
                if cs >= mcs {
                    stack.push((child, c));
                } else {
                    clusters[c].stability += (lambda - birth) * cs as f64;
                    let mut leaves = vec![child];
                    while let Some(u) = leaves.pop() {
                        if u < n {
                            point_cluster[u] = Some(c);
                        } else {
                            leaves.push(merges[u - n].left);
                            leaves.push(merges[u - n].right);
                        }
                    }
                }
            }
        }
    }
    // Excess of mass: children were created after their parents, so a
    // reverse scan visits every child before its parent.
    let mut selected = vec![false; clusters.len()];
    let mut subtree = vec![0.0f64; clusters.len()];
    for c in (0..clusters.len()).rev() {
        let children_total: f64 = clusters[c].children.iter().map(|&k| subtree[k]).sum();
        if clusters[c].children.is_empty() || clusters[c].stability >= children_total {
            selected[c] = true;
            subtree[c] = clusters[c].stability;
        } else {
            subtree[c] = children_total;
        }
    }
    // Keep the outermost selected cluster on every path.
    let mut chosen: Vec<Option<usize>> = vec![None; clusters.len()];
    for c in 0..clusters.len() {
        let inherited = clusters[c].parent.and_then(|p| chosen[p]);
        chosen[c] = inherited.or(if selected[c] { Some(c) } else { None });
    }

    let mut renumber: HashMap<usize, usize> = HashMap::new();
    point_cluster
        .iter()
        .map(|pc| {
            let c = chosen[(*pc)?]?;
            let next = renumber.len();
            Some(*renumber.entry(c).or_insert(next))
        })
        .collect()
}
