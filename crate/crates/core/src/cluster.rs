//! Clustering of embedded measures and partition comparison.
//!
//! Single linkage runs on the L-infinity distance between embedding rows; the
//! k-means route reuses the quantizer on the rows seen as unit Diracs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{norm, DiscreteMeasure};
use crate::quantize::{distortion, kmeanspp_init, lloyd_step, EmptyCellPolicy};
use crate::rng::{stream, stream_rng};
use crate::vectorize::Embedding;

/// Cluster assignments `1..=n_clusters`, numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub assignments: Vec<usize>,
    pub n_clusters: usize,
}

impl ClusterLabels {
    /// Relabels arbitrary ids by order of first appearance.
    pub fn canonical<T: Eq + std::hash::Hash + Copy>(raw: &[T]) -> Self {
        let mut ids: HashMap<T, usize> = HashMap::new();
        let assignments = raw
            .iter()
            .map(|x| {
                let next = ids.len() + 1;
                *ids.entry(*x).or_insert(next)
            })
            .collect();
        ClusterLabels { assignments, n_clusters: ids.len() }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in &rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidConfig(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if a != b || a < 0.0 || a.is_nan() {
                    return Err(Error::InvalidConfig(format!("entry ({i}, {j}) breaks symmetry or sign")));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Pairwise `max_l |e_i[l] - e_j[l]|`.
pub fn linf_distances(e: &Embedding) -> DistanceMatrix {
    let n = e.n();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d = e.rows[i]
                .iter()
                .zip(&e.rows[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cut {
    /// Remove every spanning-tree edge heavier than the threshold.
    Threshold(f64),
    /// Remove the `L - 1` heaviest spanning-tree edges.
    Clusters(usize),
}

/// One merge of the single-linkage dendrogram. Items are `0..n`; the cluster
/// created by merge `m` has id `n + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageResult {
    pub n: usize,
    pub merges: Vec<Merge>,
}

struct UnionFind {
    parent: Vec<usize>,
    cluster_id: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), cluster_id: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Minimum spanning tree edges `(i, j, w)` with `i < j`, in Kruskal order:
/// ascending weight, ties by lexicographic `(i, j)`.
fn spanning_tree(dist: &DistanceMatrix) -> Vec<(usize, usize, f64)> {
    let n = dist.n();
    let mut edges: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, dist.get(i, j)))
        .collect();
    edges.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (i, j, w) in edges {
        let (ri, rj) = (uf.find(i), uf.find(j));
        if ri != rj {
            uf.parent[rj] = ri;
            tree.push((i, j, w));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    tree
}

/// Full single-linkage dendrogram: `n - 1` merges with non-decreasing heights.
pub fn linkage(dist: &DistanceMatrix) -> LinkageResult {
    let n = dist.n();
    let mut uf = UnionFind::new(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (i, j, w) in spanning_tree(dist) {
        let (ri, rj) = (uf.find(i), uf.find(j));
        merges.push(Merge { a: uf.cluster_id[ri], b: uf.cluster_id[rj], height: w });
        uf.parent[rj] = ri;
        uf.cluster_id[ri] = n + merges.len() - 1;
    }
    LinkageResult { n, merges }
}

/// Single-linkage clusters obtained by cutting the minimum spanning tree.
pub fn single_linkage(dist: &DistanceMatrix, cut: Cut) -> Result<ClusterLabels> {
    let n = dist.n();
    let tree = spanning_tree(dist);
    let keep = match cut {
        Cut::Threshold(tau) => {
            if tau < 0.0 || tau.is_nan() {
                return Err(Error::BadThreshold(tau));
            }
            tree.iter().take_while(|e| e.2 <= tau).count()
        }
        Cut::Clusters(l) => {
            if l == 0 || l > n.max(1) {
                return Err(Error::InvalidConfig(format!("cannot cut {n} items into {l} clusters")));
            }
            n - l
        }
    };
    let mut uf = UnionFind::new(n);
    for &(i, j, _) in &tree[..keep] {
        let (ri, rj) = (uf.find(i), uf.find(j));
        uf.parent[rj] = ri;
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    Ok(ClusterLabels::canonical(&roots))
}

/// Maximum Lloyd iterations per restart of [`kmeans_vectors`].
pub const KMEANS_MAX_ITER: usize = 300;

/// Best-of-`restarts` k-means (k-means++ seeding, then Lloyd) on the embedding rows.
pub fn kmeans_vectors(e: &Embedding, l: usize, restarts: usize, seed: u64) -> Result<ClusterLabels> {
    if l == 0 || restarts == 0 {
        return Err(Error::InvalidConfig("k-means needs L >= 1 and restarts >= 1".into()));
    }
    if e.n() == 0 {
        return Err(Error::EmptySample);
    }
    if e.k() == 0 {
        return Err(Error::InvalidConfig("embedding has no columns".into()));
    }
    let radius = e.rows.iter().map(|r| norm(r)).fold(0.0, f64::max).max(1.0) * (1.0 + 1e-9);
    let points = DiscreteMeasure::uniform(e.rows.clone(), radius)?;

    let mut best: Option<(f64, crate::quantize::Codebook)> = None;
    for restart in 0..restarts {
        let mut rng = stream_rng(seed, stream::CLUSTERING | restart as u64);
        let mut cb = kmeanspp_init(&points, l, &mut rng)?;
        for _ in 0..KMEANS_MAX_ITER {
            let next = lloyd_step(&cb, &points, EmptyCellPolicy::ReseedFarthest)?;
            let done = next == cb;
            cb = next;
            if done {
                break;
            }
        }
        let cost = distortion(&cb, &points)?;
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, cb));
        }
    }
    let (_, cb) = best.expect("restarts >= 1");
    let raw: Vec<usize> = e.rows.iter().map(|r| cb.nearest(r).0).collect();
    Ok(ClusterLabels::canonical(&raw))
}

/// Normalized mutual information `I(a; b) / sqrt(H(a) H(b))`, natural log.
///
/// Two single-cluster partitions score 1; exactly one single-cluster
/// partition scores 0.
pub fn nmi(a: &ClusterLabels, b: &ClusterLabels) -> Result<f64> {
    nmi_raw(&a.assignments, &b.assignments)
}

/// [`nmi`] on raw label slices of any hashable type.
pub fn nmi_raw<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash + Copy,
    B: Eq + std::hash::Hash + Copy,
{
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    let a = ClusterLabels::canonical(a);
    let b = ClusterLabels::canonical(b);
    let n = a.len() as f64;
    let (ka, kb) = (a.n_clusters, b.n_clusters);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.assignments.iter().zip(&b.assignments) {
        joint[(x - 1) * kb + (y - 1)] += 1;
        ca[x - 1] += 1;
        cb[y - 1] += 1;
    }
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    if ka == 1 && kb == 1 {
        return Ok(1.0);
    }
    if ka == 1 || kb == 1 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = joint[i * kb + j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij * n * n / (ca[i] as f64 * cb[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
