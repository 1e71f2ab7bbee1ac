//! Exhaustive checkers and exact oracles for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{norm, sq_dist, DiscreteMeasure, MeasureSample, Norm};
use crate::quantize::{cell_stats, Codebook};

/// Which of the two shattering inequalities held for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `X_a(B(c, r/p)) >= X_b(B(c, 4pr)) + gap`
    FirstOverSecond,
    /// `X_b(B(c, r/p)) >= X_a(B(c, 4pr)) + gap`
    SecondOverFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub a: usize,
    pub b: usize,
    pub codepoint: usize,
    pub direction: Direction,
}

/// Result of an exhaustive `(p, r, gap)`-shattering check. Balls are closed
/// and Euclidean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShatteringCertificate {
    pub satisfied: bool,
    pub p: u32,
    pub r: f64,
    pub gap: f64,
    pub closed_balls: bool,
    pub witnesses: Vec<Witness>,
    /// First cross-class pair without a witness.
    pub failing_pair: Option<(usize, usize)>,
}

/// Tests every cross-class pair for a codepoint separating the small-ball
/// mass of one measure from the large-ball mass of the other by `gap`.
pub fn check_shattering(
    sample: &MeasureSample,
    cb: &Codebook,
    p: u32,
    r: f64,
    gap: f64,
) -> Result<ShatteringCertificate> {
    let labels = sample.labels().ok_or(Error::MissingLabels)?;
    if p == 0 || !(r > 0.0) || !(gap > 0.0) {
        return Err(Error::InvalidConfig("shattering needs p >= 1, r > 0 and gap > 0".into()));
    }
    if cb.dim() != sample.dim() {
        return Err(Error::DimensionMismatch { expected: sample.dim(), found: cb.dim() });
    }
    let pf = f64::from(p);
    let (small, large) = (r / pf, 4.0 * pf * r);
    let masses = |radius: f64| -> Result<Vec<Vec<f64>>> {
        sample
            .measures()
            .iter()
            .map(|m| {
                cb.codepoints()
                    .map(|c| m.ball_mass(c, radius, Norm::Euclidean))
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    };
    let inner = masses(small)?;
    let outer = masses(large)?;

    let n = sample.len();
    let mut witnesses = Vec::new();
    let mut failing_pair = None;
    'pairs: for a in 0..n {
        for b in a + 1..n {
            if labels[a] == labels[b] {
                continue;
            }
            let found = (0..cb.k()).find_map(|j| {
                if inner[a][j] >= outer[b][j] + gap {
                    Some((j, Direction::FirstOverSecond))
                } else if inner[b][j] >= outer[a][j] + gap {
                    Some((j, Direction::SecondOverFirst))
                } else {
                    None
                }
            });
            match found {
                Some((codepoint, direction)) => witnesses.push(Witness { a, b, codepoint, direction }),
                None => {
                    failing_pair = Some((a, b));
                    break 'pairs;
                }
            }
        }
    }
    Ok(ShatteringCertificate {
        satisfied: failing_pair.is_none(),
        p,
        r,
        gap,
        closed_balls: true,
        witnesses,
        failing_pair,
    })
}

/// Relative tolerance on equal total masses.
pub const MASS_TOL: f64 = 1e-9;

fn masses_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= MASS_TOL * a.abs().max(b.abs())
}

/// Exact Wasserstein-1 distance.
///
/// In one dimension any weights are accepted (quantile coupling). In higher
/// dimension both measures need the same number of atoms with one common
/// weight; the optimal assignment is then solved exactly.
pub fn w1_exact(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch { expected: m1.dim(), found: m2.dim() });
    }
    let (t1, t2) = (m1.total_mass(), m2.total_mass());
    if !masses_match(t1, t2) {
        return Err(Error::MassMismatch(t1, t2));
    }
    if m1.dim() == 1 {
        return Ok(w1_line(m1, m2));
    }
    let w = m1.weights()[0];
    let uniform = |m: &DiscreteMeasure| m.weights().iter().all(|&x| x == w);
    if m1.len() != m2.len() || !uniform(m1) || !uniform(m2) {
        return Err(Error::UnsupportedInstance(
            "multi-dimensional W1 needs equal atom counts with one common weight".into(),
        ));
    }
    let n = m1.len();
    let cost: Vec<f64> = m1
        .points()
        .flat_map(|u| m2.points().map(move |v| sq_dist(u, v).sqrt()))
        .collect();
    let perm = min_cost_assignment(n, &cost);
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(w * total)
}

/// `int |F_1^{-1}(t) - F_2^{-1}(t)| dt` by merging the sorted atoms.
fn w1_line(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> f64 {
    let sorted = |m: &DiscreteMeasure| {
        let mut a: Vec<(f64, f64)> = m.atoms().map(|(p, w)| (p[0], w)).collect();
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        a
    };
    let (a, b) = (sorted(m1), sorted(m2));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let moved = ra.min(rb);
        total += moved * (a[i].0 - b[j].0).abs();
        ra -= moved;
        rb -= moved;
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    total
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a dense
/// `n x n` cost matrix. Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based internals; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            perm[row_of[j] - 1] = j - 1;
        }
    }
    perm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationResult {
    pub concentrated: bool,
    pub w: f64,
    /// Largest within-class W1 seen.
    pub max_within_w1: f64,
    pub failing_pair: Option<(usize, usize)>,
    pub reason: Option<String>,
}

/// Checks that every within-class pair has equal total mass and `W1 <= w`.
pub fn check_concentration(sample: &MeasureSample, w: f64) -> Result<ConcentrationResult> {
    let labels = sample.labels().ok_or(Error::MissingLabels)?;
    let ms = sample.measures();
    let mut max_within_w1: f64 = 0.0;
    for a in 0..ms.len() {
        for b in a + 1..ms.len() {
            if labels[a] != labels[b] {
                continue;
            }
            let (ta, tb) = (ms[a].total_mass(), ms[b].total_mass());
            if !masses_match(ta, tb) {
                return Ok(ConcentrationResult {
                    concentrated: false,
                    w,
                    max_within_w1,
                    failing_pair: Some((a, b)),
                    reason: Some(format!("total masses differ ({ta} vs {tb})")),
                });
            }
            let d = w1_exact(&ms[a], &ms[b])?;
            max_within_w1 = max_within_w1.max(d);
            if d > w {
                return Ok(ConcentrationResult {
                    concentrated: false,
                    w,
                    max_within_w1,
                    failing_pair: Some((a, b)),
                    reason: Some(format!("W1 = {d} exceeds {w}")),
                });
            }
        }
    }
    Ok(ConcentrationResult { concentrated: true, w, max_within_w1, failing_pair: None, reason: None })
}

/// Largest support handled by [`brute_force_kmeans`].
pub const BRUTE_FORCE_MAX_SUPPORT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOptimum {
    pub codebook: Codebook,
    pub distortion: f64,
    /// Every optimal partition (within `1e-12` relative), as atom-to-group
    /// maps in restricted-growth form.
    pub optimal_partitions: Vec<Vec<usize>>,
}

/// Global optimum of the k-point quantization of a small measure, by
/// enumerating every partition of the support into at most `k` groups.
pub fn brute_force_kmeans(m: &DiscreteMeasure, k: usize) -> Result<BruteForceOptimum> {
    let n = m.len();
    if n > BRUTE_FORCE_MAX_SUPPORT {
        return Err(Error::TooLarge { support: n, max: BRUTE_FORCE_MAX_SUPPORT });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in 1..={n}")));
    }
    let d = m.dim();
    let mut best = f64::INFINITY;
    let mut partitions: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut groups = vec![0usize; n];
    let mut mass = vec![0.0; k];
    let mut moment = vec![0.0; k * d];
    // Restricted growth strings: groups[0] = 0, groups[i] <= max(groups[..i]) + 1 < k.
    loop {
        mass.iter_mut().for_each(|x| *x = 0.0);
        moment.iter_mut().for_each(|x| *x = 0.0);
        for (i, (u, w)) in m.atoms().enumerate() {
            let g = groups[i];
            mass[g] += w;
            for (acc, x) in moment[g * d..(g + 1) * d].iter_mut().zip(u) {
                *acc += w * x;
            }
        }
        let cost = exact_group_cost(m, &groups, &mass, &moment, d);
        best = best.min(cost);
        if cost <= best * (1.0 + 1e-12) + 1e-300 {
            partitions.push((cost, groups.clone()));
        }
        if !next_partition(&mut groups, k) {
            break;
        }
    }
    let tol = best * 1e-12 + 1e-300;
    let optimal_partitions: Vec<Vec<usize>> = partitions
        .into_iter()
        .filter(|(c, _)| *c <= best + tol)
        .map(|(_, g)| g)
        .collect();
    let codebook = centroids_of_partition(m, &optimal_partitions[0], k)?;
    Ok(BruteForceOptimum { codebook, distortion: best, optimal_partitions })
}

/// Sum of weighted squared distances to the group centroids, computed directly.
fn exact_group_cost(m: &DiscreteMeasure, groups: &[usize], mass: &[f64], moment: &[f64], d: usize) -> f64 {
    m.atoms()
        .zip(groups)
        .map(|((u, w), &g)| {
            let p = mass[g];
            let c = &moment[g * d..(g + 1) * d];
            w * u.iter().zip(c).map(|(x, s)| (x - s / p).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Advances a restricted growth string with values `< k`; false when exhausted.
fn next_partition(groups: &mut [usize], k: usize) -> bool {
    let n = groups.len();
    for i in (1..n).rev() {
        let prefix_max = groups[..i].iter().copied().max().unwrap_or(0);
        if groups[i] <= prefix_max && groups[i] + 1 < k {
            groups[i] += 1;
            groups[i + 1..].iter_mut().for_each(|g| *g = 0);
            return true;
        }
    }
    false
}

/// Codebook made of the group centroids of a partition; unused group ids
/// (fewer groups than `k`) repeat the first centroid.
pub fn centroids_of_partition(m: &DiscreteMeasure, groups: &[usize], k: usize) -> Result<Codebook> {
    let d = m.dim();
    let mut mass = vec![0.0; k];
    let mut moment = vec![0.0; k * d];
    for ((u, w), &g) in m.atoms().zip(groups) {
        mass[g] += w;
        for (acc, x) in moment[g * d..(g + 1) * d].iter_mut().zip(u) {
            *acc += w * x;
        }
    }
    let mut coords = Vec::with_capacity(k * d);
    for g in 0..k {
        let src = if mass[g] > 0.0 { g } else { 0 };
        coords.extend(moment[src * d..(src + 1) * d].iter().map(|s| s / mass[src]));
    }
    // Centroids lie in the convex hull, up to rounding.
    let radius = coords
        .chunks_exact(d)
        .map(norm)
        .fold(m.ball_radius(), f64::max);
    Codebook::from_flat(d, coords, radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookDiagnostics {
    /// Smallest distance between two codepoints; `None` when `k = 1`.
    pub min_separation: Option<f64>,
    /// Smallest cell mass.
    pub min_cell_mass: f64,
}

pub fn codebook_diagnostics(cb: &Codebook, m: &DiscreteMeasure) -> Result<CodebookDiagnostics> {
    let masses = cell_stats(cb, m)?.masses;
    Ok(CodebookDiagnostics {
        min_separation: cb.min_separation(),
        min_cell_mass: masses.into_iter().fold(f64::INFINITY, f64::min),
    })
}
