//! Synthetic mixture-of-measures benchmark.
//!
//! Every class shares `p - 1` centers on a sphere and owns one distinct
//! vertex of the unit hypercube. A measure of class `l` is the union of `N`
//! Gaussian draws around each of `r * C^l`. The harness compares codebook
//! construction methods by the NMI of a final k-means clustering.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_vectors, nmi_raw};
use crate::error::{Error, Result};
use crate::measure::{norm, DiscreteMeasure, MeasureSample};
use crate::quantize::{minibatch_quantize, Algorithm, Codebook, QuantizeConfig, DEFAULT_MINIBATCH_SIZE};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::vectorize::{default_sigma, vectorize_sample, Embedding, Kernel, VectorizeConfig};

fn default_sphere_radius() -> f64 {
    10.0
}

fn default_n_per_class() -> usize {
    20
}

fn default_noise_sd() -> f64 {
    1.0
}

/// Generator parameters. The JSON form uses the short names `d, L, p, r, N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "L")]
    pub n_classes: usize,
    /// Centers per class, `p - 1` of them shared on the sphere.
    #[serde(rename = "p")]
    pub centers: usize,
    /// Signal level: centers are scaled by `r`.
    #[serde(rename = "r")]
    pub signal: f64,
    /// Draws per center.
    #[serde(rename = "N")]
    pub draws: usize,
    #[serde(default = "default_sphere_radius")]
    pub sphere_radius: f64,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

impl MixtureSpec {
    /// `d = 2, L = 3, p = 4, r = 1, N = 25`, 20 measures per class.
    pub fn reference() -> Self {
        MixtureSpec {
            dim: 2,
            n_classes: 3,
            centers: 4,
            signal: 1.0,
            draws: 25,
            sphere_radius: default_sphere_radius(),
            n_per_class: default_n_per_class(),
            noise_sd: default_noise_sd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.dim == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n_classes == 0 {
            return bad("L must be at least 1".into());
        }
        if self.dim < 63 && self.n_classes as u128 > 1u128 << self.dim {
            return bad(format!("L = {} exceeds the 2^d = {} hypercube vertices", self.n_classes, 1u64 << self.dim));
        }
        if self.centers == 0 || self.draws == 0 || self.n_per_class == 0 {
            return bad("p, N and n_per_class must be at least 1".into());
        }
        if !(self.signal > 0.0 && self.signal.is_finite()) {
            return bad(format!("r must be positive, got {}", self.signal));
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return bad(format!("sphere radius must be positive, got {}", self.sphere_radius));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise sd must be non-negative, got {}", self.noise_sd));
        }
        Ok(())
    }

    pub fn with_signal(&self, r: f64) -> Self {
        MixtureSpec { signal: r, ..self.clone() }
    }
}

/// Support centers before scaling by `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureCenters {
    /// The `p - 1` centers every class shares.
    pub shared: Vec<Vec<f64>>,
    /// One hypercube vertex per class, class `l` at index `l - 1`.
    pub vertices: Vec<Vec<f64>>,
}

impl MixtureCenters {
    /// `C^l` for class `l` in `1..=L`: the shared centers, then the class vertex.
    pub fn class_centers(&self, class: usize) -> impl Iterator<Item = &[f64]> {
        self.shared
            .iter()
            .chain(std::iter::once(&self.vertices[class - 1]))
            .map(Vec::as_slice)
    }
}

/// Draws the shared sphere centers uniformly and assigns distinct hypercube
/// vertices to classes by sampling without replacement.
pub fn gen_centers(spec: &MixtureSpec, seed: u64) -> Result<MixtureCenters> {
    spec.validate()?;
    let mut rng = stream_rng(seed, stream::CENTERS);
    let d = spec.dim;
    let shared = (1..spec.centers)
        .map(|_| loop {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&g);
            if len > 0.0 {
                break g.iter().map(|x| x * spec.sphere_radius / len).collect();
            }
        })
        .collect();
    let mut chosen: Vec<u64> = Vec::with_capacity(spec.n_classes);
    let mask = if d >= 64 { u64::MAX } else { (1u64 << d) - 1 };
    while chosen.len() < spec.n_classes {
        let v = rng.random::<u64>() & mask;
        if !chosen.contains(&v) {
            chosen.push(v);
        }
    }
    let vertices = chosen
        .iter()
        .map(|&v| (0..d).map(|b| if b < 64 && (v >> b) & 1 == 1 { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(MixtureCenters { shared, vertices })
}

/// Raw point cloud of one class-`class` measure: `p * N` points.
pub fn sample_cloud<R: Rng + ?Sized>(
    class: usize,
    centers: &MixtureCenters,
    spec: &MixtureSpec,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if class == 0 || class > centers.vertices.len() {
        return Err(Error::SpecInvalid(format!("class {class} is outside 1..={}", centers.vertices.len())));
    }
    let mut points = Vec::with_capacity(spec.centers * spec.draws);
    for c in centers.class_centers(class) {
        for _ in 0..spec.draws {
            points.push(
                c.iter()
                    .map(|x| {
                        let eps: f64 = rng.sample(StandardNormal);
                        spec.signal * x + spec.noise_sd * eps
                    })
                    .collect(),
            );
        }
    }
    Ok(points)
}

/// A single class-`class` measure of unit-weight atoms, in its own enclosing ball.
pub fn sample_measure<R: Rng + ?Sized>(
    class: usize,
    centers: &MixtureCenters,
    spec: &MixtureSpec,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    let cloud = sample_cloud(class, centers, spec, rng)?;
    let radius = enclosing_radius(cloud.iter());
    DiscreteMeasure::uniform(cloud, radius)
}

/// `1.01` times the largest norm, or 1 when every point is the origin.
fn enclosing_radius<'a>(points: impl Iterator<Item = &'a Vec<f64>>) -> f64 {
    let max = points.map(|p| norm(p)).fold(0.0, f64::max);
    if max > 0.0 {
        max * 1.01
    } else {
        1.0
    }
}

/// Labeled sample of `L * n_per_class` measures with freshly drawn centers.
pub fn gen_sample(spec: &MixtureSpec, seed: u64) -> Result<(MeasureSample, MixtureCenters)> {
    let centers = gen_centers(spec, seed)?;
    let sample = gen_sample_with_centers(spec, &centers, seed)?;
    Ok((sample, centers))
}

/// Labeled sample for given centers. The measure in class-block slot
/// `(l, i)` uses its own noise stream, then the sample order is shuffled.
pub fn gen_sample_with_centers(spec: &MixtureSpec, centers: &MixtureCenters, seed: u64) -> Result<MeasureSample> {
    spec.validate()?;
    if centers.vertices.len() != spec.n_classes || centers.shared.len() + 1 != spec.centers {
        return Err(Error::SpecInvalid("centers do not match the spec".into()));
    }
    let mut clouds = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    let mut labels = Vec::with_capacity(clouds.capacity());
    for class in 1..=spec.n_classes {
        for i in 0..spec.n_per_class {
            let mut rng = stream_rng(derive_seed(seed, &[class as u64, i as u64]), stream::DATA);
            clouds.push(sample_cloud(class, centers, spec, &mut rng)?);
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    order.shuffle(&mut stream_rng(seed, stream::SHUFFLE));
    let radius = enclosing_radius(clouds.iter().flatten());
    let measures = order
        .iter()
        .map(|&i| DiscreteMeasure::uniform(clouds[i].clone(), radius))
        .collect::<Result<Vec<_>>>()?;
    let labels = order.iter().map(|&i| labels[i]).collect();
    MeasureSample::new(measures, Some(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Codepoints drawn among the sample points.
    Rand,
    /// Regular lattice over `[0, 10r]^d`.
    Grid,
}

/// Largest `m` with `m^d <= k`.
pub fn per_axis(k: usize, d: usize) -> usize {
    let fits = |m: usize| -> bool {
        let mut acc: u128 = 1;
        for _ in 0..d {
            acc = acc.saturating_mul(m as u128);
            if acc > k as u128 {
                return false;
            }
        }
        true
    };
    let mut m = (k as f64).powf(1.0 / d as f64).floor() as usize;
    while m > 1 && !fits(m) {
        m -= 1;
    }
    while fits(m + 1) {
        m += 1;
    }
    m.max(1)
}

/// Baseline codebooks. `rand` draws `k` distinct atoms of the pooled
/// support with probability proportional to weight; `grid` lays
/// `floor(k^{1/d})` evenly spaced points per axis over `[0, 10r]`, endpoints
/// included (a single point sits at `5r`). The grid codebook's ball radius is
/// enlarged to contain the lattice when needed.
pub fn baseline_codebook(
    kind: BaselineKind,
    sample: &MeasureSample,
    k: usize,
    spec: &MixtureSpec,
    seed: u64,
) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::SpecInvalid("budget k must be at least 1".into()));
    }
    let d = sample.dim();
    match kind {
        BaselineKind::Rand => {
            let mut rng = stream_rng(seed, stream::BASELINE);
            let atoms: Vec<(&[f64], f64)> = sample.measures().iter().flat_map(|m| m.atoms()).collect();
            // Efraimidis-Spirakis keys u^(1/w): the k largest form a weighted draw without replacement.
            let mut keyed: Vec<(f64, usize)> = atoms
                .iter()
                .enumerate()
                .map(|(i, (_, w))| (rng.random::<f64>().powf(1.0 / w), i))
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut coords = Vec::with_capacity(k * d);
            for t in 0..k {
                let (_, i) = keyed[t % keyed.len()];
                coords.extend_from_slice(atoms[i].0);
            }
            Codebook::from_flat(d, coords, sample.ball_radius())
        }
        BaselineKind::Grid => {
            let m = per_axis(k, d);
            let hi = 10.0 * spec.signal;
            let axis: Vec<f64> = if m == 1 {
                vec![hi / 2.0]
            } else {
                (0..m).map(|i| hi * i as f64 / (m - 1) as f64).collect()
            };
            let total = m.pow(d as u32);
            let mut coords = Vec::with_capacity(total * d);
            for flat in 0..total {
                let mut rest = flat;
                let mut point = vec![0.0; d];
                for slot in point.iter_mut().rev() {
                    *slot = axis[rest % m];
                    rest /= m;
                }
                coords.extend(point);
            }
            let radius = coords.chunks_exact(d).map(norm).fold(sample.ball_radius(), f64::max);
            Codebook::from_flat(d, coords, radius)
        }
    }
}

/// Counts (summed weights) per tile of a regular `bins^d` tiling of the box
/// `[lo, hi]^d`, flattened row-major (last axis fastest). Atoms outside the
/// box land in the nearest edge tile.
pub fn histogram_vectorize(sample: &MeasureSample, bins: usize, lo: f64, hi: f64) -> Result<Embedding> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::SpecInvalid("histogram needs bins >= 1 and a non-empty box".into()));
    }
    let d = sample.dim();
    let cols = (bins as u128).checked_pow(d as u32).filter(|&c| c <= 1 << 24).ok_or_else(|| {
        Error::SpecInvalid(format!("{bins}^{d} tiles is too many"))
    })? as usize;
    let width = (hi - lo) / bins as f64;
    let rows = sample
        .measures()
        .iter()
        .map(|m| {
            let mut row = vec![0.0; cols];
            for (u, w) in m.atoms() {
                let flat = u.iter().fold(0usize, |acc, &x| {
                    let t = ((x - lo) / width).floor();
                    let b = if t.is_nan() || t < 0.0 { 0 } else { (t as usize).min(bins - 1) };
                    acc * bins + b
                });
                row[flat] += w;
            }
            row
        })
        .collect();
    Embedding::new(rows, sample.labels().map(<[usize]>::to_vec))
}

/// Codebook construction methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Mini-batch quantization of a calibration subset, exponential kernel.
    Atol,
    Rand,
    Grid,
    Histogram,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Atol, Method::Rand, Method::Grid, Method::Histogram];

    pub fn name(self) -> &'static str {
        match self {
            Method::Atol => "atol",
            Method::Rand => "rand",
            Method::Grid => "grid",
            Method::Histogram => "histogram",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    fn index(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).unwrap() as u64
    }
}

/// Knobs shared by both sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub kernel: Kernel,
    /// k-means initializations of the final clustering.
    pub restarts: usize,
    pub minibatch_size: usize,
    /// Fraction of measures used to learn the ATOL codebook.
    pub calibration_fraction: f64,
    /// When false, `wall_ms` is written as 0 so outputs are byte-reproducible.
    pub record_timing: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            kernel: Kernel::Exponential,
            restarts: 100,
            minibatch_size: DEFAULT_MINIBATCH_SIZE,
            calibration_fraction: 0.1,
            record_timing: true,
        }
    }
}

/// One (method, sweep value, repetition) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub rep: usize,
    pub nmi: f64,
    pub wall_ms: f64,
}

/// Aggregate over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: Method,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub nmis: Vec<f64>,
    pub mean: f64,
    /// `1.96 * sd / sqrt(reps)` with the unbiased standard deviation.
    pub ci95: f64,
    pub wall_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub records: Vec<BenchRecord>,
    pub results: Vec<BenchResult>,
}

impl BenchOutput {
    pub fn result(&self, method: Method, sweep_value: f64) -> Option<&BenchResult> {
        self.results.iter().find(|r| r.method == method && r.sweep_value == sweep_value)
    }
}

/// Size of the calibration subset: the fraction of `n`, rounded up, at least 1.
pub fn calibration_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n)
}

/// Q1: fixed signal level, increasing budget.
pub fn run_q1(
    spec: &MixtureSpec,
    budgets: &[usize],
    methods: &[Method],
    reps: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<BenchOutput> {
    let points: Vec<(f64, usize)> = budgets.iter().map(|&k| (spec.signal, k)).collect();
    run_sweep(spec, "budget", &points, true, methods, reps, seed, opts)
}

/// Q2: fixed budget, increasing signal level.
pub fn run_q2(
    spec: &MixtureSpec,
    signal_levels: &[f64],
    budget: usize,
    methods: &[Method],
    reps: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<BenchOutput> {
    let points: Vec<(f64, usize)> = signal_levels.iter().map(|&r| (r, budget)).collect();
    run_sweep(spec, "signal", &points, false, methods, reps, seed, opts)
}

/// Default budget of the signal sweep.
pub const Q2_BUDGET: usize = 32;

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    spec: &MixtureSpec,
    sweep_name: &str,
    points: &[(f64, usize)],
    sweep_budget: bool,
    methods: &[Method],
    reps: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<BenchOutput> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::SpecInvalid("reps must be at least 1".into()));
    }
    if points.is_empty() || methods.is_empty() {
        return Err(Error::SpecInvalid("need at least one method and one sweep value".into()));
    }
    if let Some(&(r, k)) = points.iter().find(|(r, k)| *k == 0 || !(*r > 0.0)) {
        return Err(Error::SpecInvalid(format!("invalid sweep point (r = {r}, k = {k})")));
    }
    if opts.restarts == 0 || !(opts.calibration_fraction > 0.0 && opts.calibration_fraction <= 1.0) {
        return Err(Error::SpecInvalid("restarts must be >= 1 and calibration fraction in (0, 1]".into()));
    }

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| run_repetition(spec, sweep_name, points, sweep_budget, methods, rep, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<BenchRecord> = per_rep.into_iter().flatten().collect();

    let mut results = Vec::new();
    for &method in methods {
        for &(r, k) in points {
            let value = if sweep_budget { k as f64 } else { r };
            let mine: Vec<&BenchRecord> = records
                .iter()
                .filter(|x| x.method == method && x.sweep_value == value)
                .collect();
            let nmis: Vec<f64> = mine.iter().map(|x| x.nmi).collect();
            let (mean, ci95) = mean_ci95(&nmis);
            results.push(BenchResult {
                method,
                sweep_name: sweep_name.to_string(),
                sweep_value: value,
                nmis,
                mean,
                ci95,
                wall_ms: mine.iter().map(|x| x.wall_ms).collect(),
            });
        }
    }
    Ok(BenchOutput { records, results })
}

/// Mean and `1.96 * sd / sqrt(n)`; the half-width is 0 for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

#[allow(clippy::too_many_arguments)]
fn run_repetition(
    spec: &MixtureSpec,
    sweep_name: &str,
    points: &[(f64, usize)],
    sweep_budget: bool,
    methods: &[Method],
    rep: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<Vec<BenchRecord>> {
    let rep_seed = derive_seed(seed, &[rep as u64]);
    let centers = gen_centers(spec, rep_seed)?;
    let mut out = Vec::new();
    for (pi, &(r, k)) in points.iter().enumerate() {
        let spec_r = spec.with_signal(r);
        let sample = gen_sample_with_centers(&spec_r, &centers, rep_seed)?;
        let truth = sample.labels().expect("generated samples are labeled").to_vec();
        for &method in methods {
            let method_seed = derive_seed(rep_seed, &[method.index(), pi as u64]);
            let start = Instant::now();
            let embedding = embed(method, &sample, &spec_r, k, rep_seed, method_seed, opts)?;
            let labels = kmeans_vectors(&embedding, spec.n_classes, opts.restarts, derive_seed(method_seed, &[1]))?;
            let score = nmi_raw(&labels.assignments, &truth)?;
            let wall_ms = if opts.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            out.push(BenchRecord {
                method,
                sweep_name: sweep_name.to_string(),
                sweep_value: if sweep_budget { k as f64 } else { r },
                rep,
                nmi: score,
                wall_ms,
            });
        }
    }
    Ok(out)
}

fn embed(
    method: Method,
    sample: &MeasureSample,
    spec: &MixtureSpec,
    k: usize,
    rep_seed: u64,
    method_seed: u64,
    opts: &HarnessOptions,
) -> Result<Embedding> {
    let codebook = match method {
        Method::Histogram => {
            let bins = per_axis(k, sample.dim());
            return histogram_vectorize(sample, bins, 0.0, 10.0 * spec.signal);
        }
        Method::Atol => {
            // Same subset for every method and budget of a repetition.
            let n = sample.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(rep_seed, stream::CALIBRATION));
            let subset = sample.select(&order[..calibration_size(n, opts.calibration_fraction)])?;
            let cfg = QuantizeConfig::new(k, Algorithm::MiniBatch)
                .with_minibatch_size(opts.minibatch_size)
                .with_seed(method_seed);
            let cfg = if subset.len() < 2 { QuantizeConfig { algorithm: Algorithm::MiniBatchNoSplit, ..cfg } } else { cfg };
            minibatch_quantize(&subset, &cfg)?.0
        }
        Method::Rand => baseline_codebook(BaselineKind::Rand, sample, k, spec, method_seed)?,
        Method::Grid => baseline_codebook(BaselineKind::Grid, sample, k, spec, method_seed)?,
    };
    let cfg = VectorizeConfig::new(opts.kernel, default_sigma(&codebook))?;
    vectorize_sample(sample, &codebook, &cfg)
}
