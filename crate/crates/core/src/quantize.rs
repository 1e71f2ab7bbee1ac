//! Voronoi geometry, distortion, k-means++ seeding and the batch (Lloyd) and
//! mini-batch (MacQueen-type) quantizers of the mean measure.
//!
//! Cells are indexed from 0 in this module. Ties between equidistant
//! codepoints go to the lowest index, which makes `W_0, ..., W_{k-1}` a
//! partition of space.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{mean_of, norm, sq_dist, DiscreteMeasure, MeasureSample};
use crate::rng::{stream, stream_rng};

/// Relative slack allowed on `|c_j| <= R` for codepoints produced by radial projection.
const BALL_SLACK: f64 = 1e-12;

/// Codebook displacement below which the batch algorithm stops early.
pub const MOVEMENT_TOL: f64 = 1e-12;

/// Default mini-batch size, counted in measures.
pub const DEFAULT_MINIBATCH_SIZE: usize = 1000;

/// Ordered list of `k` codepoints in `B(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    ball_radius: f64,
    coords: Vec<f64>,
}

impl Codebook {
    pub fn new(codepoints: Vec<Vec<f64>>, ball_radius: f64) -> Result<Self> {
        let dim = codepoints
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidConfig("codebook needs at least one codepoint".into()))?;
        let mut coords = Vec::with_capacity(dim * codepoints.len());
        for c in &codepoints {
            if c.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
            }
            coords.extend_from_slice(c);
        }
        Self::from_flat(dim, coords, ball_radius)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, ball_radius: f64) -> Result<Self> {
        if dim == 0 || coords.is_empty() {
            return Err(Error::InvalidConfig("codebook needs at least one codepoint".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: coords.len() % dim });
        }
        if !(ball_radius > 0.0 && ball_radius.is_finite()) {
            return Err(Error::InvalidRadius(ball_radius));
        }
        for (index, c) in coords.chunks_exact(dim).enumerate() {
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index });
            }
            let r = norm(c);
            if r > ball_radius * (1.0 + BALL_SLACK) {
                return Err(Error::PointOutsideBall { index, norm: r, radius: ball_radius });
            }
        }
        Ok(Codebook { dim, ball_radius, coords })
    }

    pub fn k(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    pub fn codepoint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn codepoints(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.codepoints().map(<[f64]>::to_vec).collect()
    }

    /// Nearest codepoint and its squared distance; ties resolve to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.codepoints().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// Largest Euclidean displacement between matching codepoints.
    pub fn max_displacement(&self, other: &Codebook) -> f64 {
        self.codepoints()
            .zip(other.codepoints())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max)
    }

    /// Smallest distance between two codepoints with different indices; `None` when `k = 1`.
    pub fn min_separation(&self) -> Option<f64> {
        let k = self.k();
        let mut best: Option<f64> = None;
        for i in 0..k {
            for j in i + 1..k {
                let d = sq_dist(self.codepoint(i), self.codepoint(j)).sqrt();
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found });
        }
        Ok(())
    }
}

/// Index of the Voronoi cell `W_j(c)` containing `x`.
pub fn voronoi_assign(cb: &Codebook, x: &[f64]) -> Result<usize> {
    cb.check_dim(x.len())?;
    Ok(cb.nearest(x).0)
}

/// Distortion `sum_u w(u) min_j |u - c_j|^2`.
pub fn distortion(cb: &Codebook, m: &DiscreteMeasure) -> Result<f64> {
    cb.check_dim(m.dim())?;
    Ok(distortion_unchecked(cb, m))
}

pub(crate) fn distortion_unchecked(cb: &Codebook, m: &DiscreteMeasure) -> f64 {
    m.atoms().map(|(u, w)| w * cb.nearest(u).1).sum()
}

/// Per-cell masses and first moments of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub dim: usize,
    /// `p_j`, the mass of cell `j`.
    pub masses: Vec<f64>,
    /// `sum_{u in W_j} w(u) u`, row-major `k x d`.
    pub moments: Vec<f64>,
}

impl CellStats {
    pub fn moment(&self, j: usize) -> &[f64] {
        &self.moments[j * self.dim..(j + 1) * self.dim]
    }

    /// Cell centroid, `None` for an empty cell.
    pub fn centroid(&self, j: usize) -> Option<Vec<f64>> {
        let p = self.masses[j];
        (p > 0.0).then(|| self.moment(j).iter().map(|x| x / p).collect())
    }
}

pub fn cell_stats(cb: &Codebook, m: &DiscreteMeasure) -> Result<CellStats> {
    cb.check_dim(m.dim())?;
    Ok(cell_stats_unchecked(cb, m))
}

fn cell_stats_unchecked(cb: &Codebook, m: &DiscreteMeasure) -> CellStats {
    let (k, d) = (cb.k(), cb.dim);
    let mut masses = vec![0.0; k];
    let mut moments = vec![0.0; k * d];
    for (u, w) in m.atoms() {
        let j = cb.nearest(u).0;
        masses[j] += w;
        for (acc, x) in moments[j * d..(j + 1) * d].iter_mut().zip(u) {
            *acc += w * x;
        }
    }
    CellStats { dim: d, masses, moments }
}

/// Weighted k-means++ seeding over the support of `m`.
///
/// The first codepoint is drawn with probability proportional to weight,
/// each following one proportionally to `weight * D^2`. Once every support
/// point has been picked the remaining codepoints duplicate chosen points.
pub fn kmeanspp_init<R: Rng + ?Sized>(m: &DiscreteMeasure, k: usize, rng: &mut R) -> Result<Codebook> {
    if m.is_empty() {
        return Err(Error::EmptySupport);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let weights = m.weights();
    let mut coords = Vec::with_capacity(k * m.dim());
    let first = sample_index(weights.iter().copied(), rng);
    coords.extend_from_slice(m.point(first));
    let mut d2: Vec<f64> = m.points().map(|u| sq_dist(u, m.point(first))).collect();
    let mut scores = vec![0.0; m.len()];
    for _ in 1..k {
        for ((s, w), d) in scores.iter_mut().zip(weights).zip(&d2) {
            *s = w * d;
        }
        let next = if scores.iter().any(|&s| s > 0.0) {
            sample_index(scores.iter().copied(), rng)
        } else {
            sample_index(weights.iter().copied(), rng)
        };
        let c = m.point(next);
        coords.extend_from_slice(c);
        for (d, u) in d2.iter_mut().zip(m.points()) {
            *d = d.min(sq_dist(u, c));
        }
    }
    Codebook::from_flat(m.dim(), coords, m.ball_radius())
}

/// Draws an index with probability proportional to the (non-negative) scores.
pub(crate) fn sample_index<R: Rng + ?Sized>(scores: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = scores.clone().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, s) in scores.enumerate() {
        if s <= 0.0 {
            continue;
        }
        acc += s;
        last_positive = i;
        if acc > target {
            return i;
        }
    }
    last_positive
}

/// What happens to a codepoint whose cell has zero mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCellPolicy {
    /// Leave the codepoint where it is.
    #[default]
    Keep,
    /// Move it onto the support point farthest from the current codebook.
    ReseedFarthest,
}

/// One Lloyd iteration against a fixed target measure.
pub fn lloyd_step(cb: &Codebook, m: &DiscreteMeasure, policy: EmptyCellPolicy) -> Result<Codebook> {
    cb.check_dim(m.dim())?;
    Ok(lloyd_step_unchecked(cb, m, policy))
}

fn lloyd_step_unchecked(cb: &Codebook, m: &DiscreteMeasure, policy: EmptyCellPolicy) -> Codebook {
    let stats = cell_stats_unchecked(cb, m);
    let d = cb.dim;
    let mut next = cb.clone();
    let mut empty = Vec::new();
    for (j, &p) in stats.masses.iter().enumerate() {
        if p > 0.0 {
            for (c, s) in next.coords[j * d..(j + 1) * d].iter_mut().zip(stats.moment(j)) {
                *c = s / p;
            }
        } else {
            empty.push(j);
        }
    }
    if policy == EmptyCellPolicy::ReseedFarthest {
        for j in empty {
            let (far, dist) = m
                .points()
                .enumerate()
                .map(|(i, u)| (i, next.nearest(u).1))
                .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if dist > 0.0 {
                next.coords[j * d..(j + 1) * d].copy_from_slice(m.point(far));
            }
        }
    }
    next
}

/// Number of Lloyd iterations `ceil(ln n / ln(4/3))`, at least 1.
pub fn auto_iterations(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    let t = ((n as f64).ln() / (4.0f64 / 3.0).ln()).ceil() as usize;
    t.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Batch,
    #[serde(rename = "minibatch")]
    MiniBatch,
    #[serde(rename = "minibatch_nosplit")]
    MiniBatchNoSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Iterations {
    /// Batch: `auto_iterations(n)`. Mini-batch: `max(1, n / minibatch_size)` batches.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    KMeansPlusPlus,
    Given(Codebook),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeConfig {
    pub k: usize,
    pub algorithm: Algorithm,
    pub iterations: Iterations,
    /// Measures per mini-batch; only read when `iterations` is `Auto`.
    pub minibatch_size: usize,
    pub seed: u64,
    pub init: Init,
    pub empty_cell_policy: EmptyCellPolicy,
    /// Independent k-means++ initializations; the lowest empirical distortion wins.
    pub restarts: usize,
}

impl QuantizeConfig {
    pub fn new(k: usize, algorithm: Algorithm) -> Self {
        QuantizeConfig {
            k,
            algorithm,
            iterations: Iterations::Auto,
            minibatch_size: DEFAULT_MINIBATCH_SIZE,
            seed: 0,
            init: Init::KMeansPlusPlus,
            empty_cell_policy: EmptyCellPolicy::Keep,
            restarts: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: Iterations) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_minibatch_size(mut self, size: usize) -> Self {
        self.minibatch_size = size;
        self
    }

    pub fn with_policy(mut self, policy: EmptyCellPolicy) -> Self {
        self.empty_cell_policy = policy;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    fn validate(&self, sample: &MeasureSample) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.iterations == Iterations::Fixed(0) {
            return Err(Error::InvalidConfig("iteration count must be at least 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("mini-batch size must be at least 1".into()));
        }
        if let Init::Given(cb) = &self.init {
            if cb.k() != self.k {
                return Err(Error::InvalidConfig(format!(
                    "initial codebook has {} codepoints, k = {}",
                    cb.k(),
                    self.k
                )));
            }
            cb.check_dim(sample.dim())?;
        }
        Ok(())
    }
}

/// Diagnostics of a quantization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeReport {
    pub algorithm: Algorithm,
    pub k: usize,
    pub n_measures: usize,
    pub iterations_planned: usize,
    pub iterations_run: usize,
    pub early_stopped: bool,
    /// Empirical distortion against the mean measure, before the first step
    /// and after each step (batch algorithm only).
    pub distortion_trace: Vec<f64>,
    /// Empirical distortion of the returned codebook against the mean measure.
    pub final_distortion: f64,
    /// `p_j` of the returned codebook against the mean measure.
    pub cell_masses: Vec<f64>,
    /// Smallest pairwise codepoint distance, absent when `k = 1`.
    pub min_cell_separation: Option<f64>,
    pub min_cell_mass: f64,
    /// Measures per mini-batch (mini-batch algorithms only).
    pub batch_sizes: Vec<usize>,
    pub restarts: usize,
    pub best_restart: usize,
    pub seed: u64,
}

/// Quantizes the mean measure of `sample` according to `cfg.algorithm`.
pub fn quantize(sample: &MeasureSample, cfg: &QuantizeConfig) -> Result<(Codebook, QuantizeReport)> {
    match cfg.algorithm {
        Algorithm::Batch => batch_quantize(sample, cfg),
        Algorithm::MiniBatch | Algorithm::MiniBatchNoSplit => minibatch_quantize(sample, cfg),
    }
}

/// Lloyd's algorithm run on the empirical mean measure.
pub fn batch_quantize(sample: &MeasureSample, cfg: &QuantizeConfig) -> Result<(Codebook, QuantizeReport)> {
    batch_quantize_observed(sample, cfg, |_, _, _| {})
}

/// [`batch_quantize`] that reports every iterate as `(restart, t, codebook)`;
/// `t = 0` is the initialization.
pub fn batch_quantize_observed<F>(
    sample: &MeasureSample,
    cfg: &QuantizeConfig,
    mut observer: F,
) -> Result<(Codebook, QuantizeReport)>
where
    F: FnMut(usize, usize, &Codebook),
{
    if cfg.algorithm != Algorithm::Batch {
        return Err(Error::InvalidConfig("batch_quantize needs algorithm = batch".into()));
    }
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    cfg.validate(sample)?;
    let target = sample.mean_measure();
    let planned = match cfg.iterations {
        Iterations::Auto => auto_iterations(sample.len()),
        Iterations::Fixed(t) => t,
    };

    let mut best: Option<(Codebook, Vec<f64>, usize, bool, usize)> = None;
    for restart in 0..effective_restarts(cfg) {
        let mut cb = initial_codebook(&target, cfg, restart)?;
        observer(restart, 0, &cb);
        let mut trace = vec![distortion_unchecked(&cb, &target)];
        let mut run = 0;
        let mut stopped = false;
        for t in 1..=planned {
            let next = lloyd_step_unchecked(&cb, &target, cfg.empty_cell_policy);
            observer(restart, t, &next);
            let moved = cb.max_displacement(&next);
            cb = next;
            trace.push(distortion_unchecked(&cb, &target));
            run = t;
            if moved < MOVEMENT_TOL {
                stopped = t < planned;
                break;
            }
        }
        let last = *trace.last().expect("trace starts non-empty");
        if best.as_ref().is_none_or(|b| last < *b.1.last().unwrap()) {
            best = Some((cb, trace, run, stopped, restart));
        }
    }
    let (cb, trace, run, stopped, best_restart) = best.expect("at least one restart");
    let report = build_report(cfg, sample.len(), &cb, &target, planned, run, stopped, trace, vec![], best_restart);
    Ok((cb, report))
}

/// Mini-batch algorithm: one pass over `T` batches with step size `1/(t+1)`.
///
/// In split mode every batch is halved; the first half estimates the cell
/// masses, the second half the update direction. The no-split variant uses
/// the whole batch for both. After each update codepoints are projected
/// radially onto `B(0, R)`.
pub fn minibatch_quantize(sample: &MeasureSample, cfg: &QuantizeConfig) -> Result<(Codebook, QuantizeReport)> {
    let split = match cfg.algorithm {
        Algorithm::MiniBatch => true,
        Algorithm::MiniBatchNoSplit => false,
        Algorithm::Batch => {
            return Err(Error::InvalidConfig("minibatch_quantize needs a mini-batch algorithm".into()))
        }
    };
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    cfg.validate(sample)?;
    let n = sample.len();
    let batches = match cfg.iterations {
        Iterations::Auto => (n / cfg.minibatch_size).max(1),
        Iterations::Fixed(t) => t,
    };
    let sizes = batch_sizes(n, batches);
    let required = if split { 2 } else { 1 };
    if let Some(&size) = sizes.iter().find(|&&s| s < required) {
        return Err(Error::BatchTooSmall { size, required });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE));
    let target = sample.mean_measure();
    let measures = sample.measures();

    let mut best: Option<(Codebook, f64, usize)> = None;
    for restart in 0..effective_restarts(cfg) {
        let mut cb = initial_codebook(&target, cfg, restart)?;
        let mut start = 0;
        for (t, &size) in sizes.iter().enumerate() {
            let batch = &order[start..start + size];
            start += size;
            let (first, second) = if split { batch.split_at(size.div_ceil(2)) } else { (batch, batch) };
            let mass_half = mean_of(first.iter().map(|&i| &measures[i]));
            let update_half = mean_of(second.iter().map(|&i| &measures[i]));
            cb = minibatch_step(&cb, &mass_half, &update_half, t);
        }
        let dist = distortion_unchecked(&cb, &target);
        if best.as_ref().is_none_or(|b| dist < b.1) {
            best = Some((cb, dist, restart));
        }
    }
    let (cb, _, best_restart) = best.expect("at least one restart");
    let report = build_report(cfg, n, &cb, &target, batches, batches, false, vec![], sizes, best_restart);
    Ok((cb, report))
}

/// `c_j <- proj(c_j - int (c_j - u) 1_{W_j} d(update) / ((t + 1) p_j))`,
/// with `p_j` taken from `mass_half`; cells with `p_j = 0` are left alone.
pub fn minibatch_step(cb: &Codebook, mass_half: &DiscreteMeasure, update_half: &DiscreteMeasure, t: usize) -> Codebook {
    let masses = cell_stats_unchecked(cb, mass_half).masses;
    let update = cell_stats_unchecked(cb, update_half);
    let d = cb.dim;
    let step = (t + 1) as f64;
    let mut next = cb.clone();
    for (j, &p) in masses.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let q = update.masses[j];
        let c = &mut next.coords[j * d..(j + 1) * d];
        for (x, m) in c.iter_mut().zip(update.moment(j)) {
            *x -= (*x * q - m) / (step * p);
        }
        project_onto_ball(c, cb.ball_radius);
    }
    next
}

/// Radial projection onto the closed ball of radius `r`.
pub fn project_onto_ball(x: &mut [f64], r: f64) {
    let len = norm(x);
    if len > r {
        let scale = r / len;
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Splits `n` items into `batches` consecutive runs whose lengths differ by at most one.
pub fn batch_sizes(n: usize, batches: usize) -> Vec<usize> {
    let base = n / batches;
    let extra = n % batches;
    (0..batches).map(|b| base + usize::from(b < extra)).collect()
}

fn effective_restarts(cfg: &QuantizeConfig) -> usize {
    match cfg.init {
        Init::Given(_) => 1,
        Init::KMeansPlusPlus => cfg.restarts,
    }
}

fn initial_codebook(target: &DiscreteMeasure, cfg: &QuantizeConfig, restart: usize) -> Result<Codebook> {
    match &cfg.init {
        Init::Given(cb) => Ok(cb.clone()),
        Init::KMeansPlusPlus => {
            let mut rng = stream_rng(cfg.seed, stream::KMEANSPP | restart as u64);
            kmeanspp_init(target, cfg.k, &mut rng)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    cfg: &QuantizeConfig,
    n: usize,
    cb: &Codebook,
    target: &DiscreteMeasure,
    planned: usize,
    run: usize,
    early_stopped: bool,
    distortion_trace: Vec<f64>,
    batch_sizes: Vec<usize>,
    best_restart: usize,
) -> QuantizeReport {
    let cell_masses = cell_stats_unchecked(cb, target).masses;
    let min_cell_mass = cell_masses.iter().copied().fold(f64::INFINITY, f64::min);
    QuantizeReport {
        algorithm: cfg.algorithm,
        k: cb.k(),
        n_measures: n,
        iterations_planned: planned,
        iterations_run: run,
        early_stopped,
        distortion_trace,
        final_distortion: distortion_unchecked(cb, target),
        cell_masses,
        min_cell_separation: cb.min_separation(),
        min_cell_mass,
        batch_sizes,
        restarts: effective_restarts(cfg),
        best_restart,
        seed: cfg.seed,
    }
}
