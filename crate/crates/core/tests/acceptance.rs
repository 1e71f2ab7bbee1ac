//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stdout
//! (outside the harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use meanquant::quantize::batch_quantize_observed;
use meanquant::rng::{derive_seed, stream_rng};
use meanquant::synth::Method;
use meanquant::verify::centroids_of_partition;
use meanquant::vectorize::DEFAULT_GRID_STEP;
use meanquant::*;
use rand::Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id} [{name}]: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn random_measure<R: Rng>(rng: &mut R, d: usize, atoms: usize, radius: f64) -> DiscreteMeasure {
    let points = (0..atoms)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) * radius / (d as f64).sqrt()).collect())
        .collect();
    let weights = (0..atoms).map(|_| rng.random_range(0.1..2.0)).collect();
    DiscreteMeasure::new(points, weights, radius).unwrap()
}

fn single(m: DiscreteMeasure) -> MeasureSample {
    MeasureSample::new(vec![m], None).unwrap()
}

#[test]
fn c1_oracle_equivalence() {
    let start = Instant::now();
    let mut worst_gap = 0.0f64;
    let mut below = 0usize;
    let mut inits = 0usize;
    for seed in 0..50u64 {
        let mut rng = stream_rng(seed, 100);
        let d = 1 + (seed % 2) as usize;
        let atoms = rng.random_range(2..=8);
        let k = rng.random_range(1..=atoms.min(4));
        let m = random_measure(&mut rng, d, atoms, 3.0);
        let opt = brute_force_kmeans(&m, k).unwrap();
        let sample = single(m.clone());
        for groups in &opt.optimal_partitions {
            let init = centroids_of_partition(&m, groups, k).unwrap();
            let cfg = QuantizeConfig::new(k, Algorithm::Batch).with_init(Init::Given(init));
            let (_, report) = batch_quantize(&sample, &cfg).unwrap();
            let gap = (report.final_distortion - opt.distortion).abs() / opt.distortion.max(f64::MIN_POSITIVE);
            worst_gap = worst_gap.max(if opt.distortion == 0.0 { report.final_distortion } else { gap });
            inits += 1;
        }
        for s in 0..5 {
            for policy in [EmptyCellPolicy::Keep, EmptyCellPolicy::ReseedFarthest] {
                let cfg = QuantizeConfig::new(k, Algorithm::Batch).with_seed(s).with_policy(policy);
                let (_, report) = batch_quantize(&sample, &cfg).unwrap();
                if report.final_distortion < opt.distortion - 1e-12 {
                    below += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_gap <= 1e-9 && below == 0 && secs < 10.0;
    verdict(
        1,
        "oracle equivalence",
        pass,
        &format!("{inits} optimal inits, worst rel gap {worst_gap:.2e}, {below} runs below optimum, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn c2_lloyd_monotone() {
    let start = Instant::now();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..200u64 {
        let mut rng = stream_rng(seed, 200);
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=8);
        let atoms = rng.random_range(1..=40);
        let m = random_measure(&mut rng, d, atoms, 2.0);
        let cb = Codebook::new(
            (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) * 2.0 / (d as f64).sqrt()).collect())
                .collect(),
            2.0,
        )
        .unwrap();
        let before = distortion(&cb, &m).unwrap();
        let next = lloyd_step(&cb, &m, EmptyCellPolicy::Keep).unwrap();
        let after = distortion(&next, &m).unwrap();
        worst = worst.max((after - before) / before.max(f64::MIN_POSITIVE));
        if after > before * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 5.0;
    verdict(
        2,
        "Lloyd monotonicity",
        pass,
        &format!("200 pairs, {violations} increases, largest relative change {worst:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn c3_kernel_conformance() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for p in [1u32, 2, 4, 8] {
        if !check_kernel(Kernel::Exponential, p, 1.0 / f64::from(p), DEFAULT_GRID_STEP).unwrap().passed() {
            failures.push(format!("exp as ({p}, 1/{p})"));
        }
    }
    if !check_kernel(Kernel::Psi0, 1, 0.0, DEFAULT_GRID_STEP).unwrap().passed() {
        failures.push("psi0 as (1, 0)".into());
    }
    let g0 = check_kernel(Kernel::Gaussian, 1, 0.0, DEFAULT_GRID_STEP).unwrap();
    if g0.small_outside {
        failures.push("gauss unexpectedly small outside at delta 0".into());
    }
    if !check_kernel(Kernel::Gaussian, 1, (-2.0f64).exp(), DEFAULT_GRID_STEP).unwrap().passed() {
        failures.push("gauss as (1, e^-2)".into());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 5.0;
    let detail = if failures.is_empty() { format!("{secs:.2}s") } else { failures.join("; ") };
    verdict(3, "kernel conformance", pass, &detail);
    assert!(pass);
}

/// Two classes of ten 4-atom measures jittered by at most 0.1 per
/// coordinate around (0, 0) and (10, 0).
fn two_class_fixture() -> (MeasureSample, Codebook) {
    let mut rng = stream_rng(4, 400);
    let mut measures = Vec::new();
    let mut labels = Vec::new();
    for (class, center) in [(1usize, [0.0, 0.0]), (2, [10.0, 0.0])] {
        for _ in 0..10 {
            let points = (0..4)
                .map(|_| center.iter().map(|c| c + rng.random_range(-0.1..=0.1)).collect())
                .collect();
            measures.push(DiscreteMeasure::new(points, vec![0.25; 4], 12.0).unwrap());
            labels.push(class);
        }
    }
    let cb = Codebook::new(vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![-10.0, 0.0]], 12.0).unwrap();
    (MeasureSample::new(measures, Some(labels)).unwrap(), cb)
}

#[test]
fn c4_separation_pipeline() {
    let start = Instant::now();
    let (sample, cb) = two_class_fixture();
    let (p, r, gap) = (1, 1.0, 1.0);
    let shattered = check_shattering(&sample, &cb, p, r, gap).unwrap();
    let conc = check_concentration(&sample, r * gap / 4.0).unwrap();
    let labels = sample.labels().unwrap();
    let mut ok = shattered.satisfied && conc.concentrated;
    let mut detail = format!("shattered {}, concentrated {}", shattered.satisfied, conc.concentrated);
    for sigma in [1.0, 1.5, 2.0] {
        let e = vectorize_sample(&sample, &cb, &VectorizeConfig::new(Kernel::Psi0, sigma).unwrap()).unwrap();
        let dist = linf_distances(&e);
        let (mut within, mut cross) = (0.0f64, f64::INFINITY);
        for i in 0..e.n() {
            for j in i + 1..e.n() {
                if labels[i] == labels[j] {
                    within = within.max(dist.get(i, j));
                } else {
                    cross = cross.min(dist.get(i, j));
                }
            }
        }
        let clusters = single_linkage(&dist, Cut::Threshold(0.4)).unwrap();
        let score = nmi_raw(&clusters.assignments, labels).unwrap();
        ok &= within <= 0.25 && cross >= 0.5 && score == 1.0;
        detail.push_str(&format!("; sigma {sigma}: within {within:.3}, cross {cross:.3}, NMI {score}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = ok && secs < 5.0;
    verdict(4, "separation pipeline", pass, &format!("{detail}, {secs:.2}s"));
    assert!(pass);
}

const RATE_SIZES: [usize; 4] = [100, 400, 1600, 6400];
const RATE_SEEDS: u64 = 50;
const MASTER_SEED: u64 = 2024;

/// Cluster centers of the rate process. Each measure puts unit mass at one
/// of the two atoms `center +/- (0.5, 0)` of every cluster, picked by a fair
/// coin, so the population mean measure has 8 atoms of weight 1/2 and its
/// optimal 4-point codebook is the set of centers.
const RATE_CENTERS: [[f64; 2]; 4] = [[5.0, 5.0], [-5.0, 5.0], [-5.0, -5.0], [5.0, -5.0]];

fn rate_population() -> DiscreteMeasure {
    let points = RATE_CENTERS
        .iter()
        .flat_map(|c| [vec![c[0] - 0.5, c[1]], vec![c[0] + 0.5, c[1]]])
        .collect();
    DiscreteMeasure::new(points, vec![0.5; 8], 8.0).unwrap()
}

fn rate_sample(n: usize, seed: u64) -> MeasureSample {
    let mut rng = stream_rng(seed, 500);
    let measures = (0..n)
        .map(|_| {
            let points = RATE_CENTERS
                .iter()
                .map(|c| vec![c[0] + if rng.random_bool(0.5) { 0.5 } else { -0.5 }, c[1]])
                .collect();
            DiscreteMeasure::uniform(points, 8.0).unwrap()
        })
        .collect();
    MeasureSample::new(measures, None).unwrap()
}

struct RateRun {
    csv: String,
    slope: f64,
    means: Vec<f64>,
}

fn run_rate(master: u64) -> RateRun {
    let population = rate_population();
    let optimum = brute_force_kmeans(&population, 4).unwrap().distortion;
    let mut csv = String::from("n,seed,excess\n");
    let mut means = Vec::new();
    for &n in &RATE_SIZES {
        let mut total = 0.0;
        for s in 0..RATE_SEEDS {
            let seed = derive_seed(master, &[n as u64, s]);
            let sample = rate_sample(n, seed);
            let cfg = QuantizeConfig::new(4, Algorithm::Batch).with_seed(seed).with_restarts(5);
            let (cb, _) = batch_quantize(&sample, &cfg).unwrap();
            let excess = distortion(&cb, &population).unwrap() - optimum;
            csv.push_str(&format!("{n},{s},{excess}\n"));
            total += excess;
        }
        means.push(total / RATE_SEEDS as f64);
    }
    let xs: Vec<f64> = RATE_SIZES.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    RateRun { csv, slope: sxy / sxx, means }
}

fn rate_first() -> &'static (RateRun, f64) {
    static CELL: OnceLock<(RateRun, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let run = run_rate(MASTER_SEED);
        (run, start.elapsed().as_secs_f64())
    })
}

#[test]
fn c5_rate() {
    let (run, secs) = rate_first();
    let pass = run.slope <= -0.7 && run.slope.is_finite() && *secs < 180.0;
    let means: Vec<String> = run.means.iter().map(|m| format!("{m:.3e}")).collect();
    verdict(
        5,
        "excess distortion rate",
        pass,
        &format!("slope {:.3}, mean excess [{}], {secs:.1}s", run.slope, means.join(", ")),
    );
    assert!(pass);
}

const PARITY_SEEDS: u64 = 20;
const PARITY_BUDGETS: [usize; 4] = [4, 8, 16, 32];
const PARITY_BATCH: usize = 10;

struct ParityRun {
    csv: String,
    ratios: Vec<f64>,
}

fn run_parity(master: u64) -> ParityRun {
    let spec = MixtureSpec::reference();
    let mut csv = String::from("k,seed,batch,minibatch\n");
    let mut ratios = Vec::new();
    for &k in &PARITY_BUDGETS {
        let (mut batch_sum, mut mini_sum) = (0.0, 0.0);
        for s in 0..PARITY_SEEDS {
            let seed = derive_seed(master, &[k as u64, s]);
            let (sample, _) = gen_sample(&spec, seed).unwrap();
            let (_, batch) = batch_quantize(&sample, &QuantizeConfig::new(k, Algorithm::Batch).with_seed(seed)).unwrap();
            let cfg = QuantizeConfig::new(k, Algorithm::MiniBatch)
                .with_seed(seed)
                .with_minibatch_size(PARITY_BATCH);
            let (_, mini) = minibatch_quantize(&sample, &cfg).unwrap();
            csv.push_str(&format!("{k},{s},{},{}\n", batch.final_distortion, mini.final_distortion));
            batch_sum += batch.final_distortion;
            mini_sum += mini.final_distortion;
        }
        ratios.push(mini_sum / batch_sum);
    }
    ParityRun { csv, ratios }
}

fn parity_first() -> &'static (ParityRun, f64) {
    static CELL: OnceLock<(ParityRun, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let run = run_parity(MASTER_SEED);
        (run, start.elapsed().as_secs_f64())
    })
}

#[test]
fn c6_minibatch_parity() {
    let (run, secs) = parity_first();
    let pass = run.ratios.iter().all(|&r| r <= 2.0) && *secs < 60.0;
    let ratios: Vec<String> = PARITY_BUDGETS
        .iter()
        .zip(&run.ratios)
        .map(|(k, r)| format!("k={k}: {r:.3}"))
        .collect();
    verdict(
        6,
        "mini-batch parity",
        pass,
        &format!("mean minibatch / batch distortion {}, {secs:.1}s", ratios.join(", ")),
    );
    assert!(pass);
}

const Q1_BUDGETS: [usize; 4] = [4, 8, 16, 32];

fn run_bench(master: u64) -> (BenchOutput, String, String) {
    let spec = MixtureSpec::reference();
    let opts = HarnessOptions { record_timing: false, ..HarnessOptions::default() };
    let out = run_q1(&spec, &Q1_BUDGETS, &Method::ALL, 20, master, &opts).unwrap();
    let mut results = Vec::new();
    io::write_results(&out.records, &mut results).unwrap();
    let mut aggregate = Vec::new();
    io::write_aggregate(&out.results, &mut aggregate).unwrap();
    (out, String::from_utf8(results).unwrap(), String::from_utf8(aggregate).unwrap())
}

fn bench_first() -> &'static ((BenchOutput, String, String), f64) {
    static CELL: OnceLock<((BenchOutput, String, String), f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let run = run_bench(MASTER_SEED);
        (run, start.elapsed().as_secs_f64())
    })
}

#[test]
fn c7_q1_trends() {
    let ((out, _, _), secs) = bench_first();
    let atol32 = out.result(Method::Atol, 32.0).unwrap();
    let atol4 = out.result(Method::Atol, 4.0).unwrap();
    let rand32 = out.result(Method::Rand, 32.0).unwrap();
    let beats_rand = atol32.mean >= rand32.mean;
    let grows = atol32.mean >= atol4.mean - atol32.ci95.max(atol4.ci95);
    let pass = beats_rand && grows && *secs < 120.0;
    let table: Vec<String> = out
        .results
        .iter()
        .map(|r| format!("{}@{}={:.3}±{:.3}", r.method.name(), r.sweep_value, r.mean, r.ci95))
        .collect();
    verdict(7, "Q1 trends", pass, &format!("{}, {secs:.1}s", table.join(" ")));
    assert!(pass);
}

#[test]
fn c8_point_sample_reduction() {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut steps = 0;
    for seed in 0..20u64 {
        let mut rng = stream_rng(seed, 800);
        let d = rng.random_range(1..=3);
        let n = rng.random_range(5..=60);
        let k = rng.random_range(1..=6.min(n));
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let measures = points
            .iter()
            .map(|p| DiscreteMeasure::uniform(vec![p.clone()], 2.0).unwrap())
            .collect();
        let sample = MeasureSample::new(measures, None).unwrap();
        let init: Vec<Vec<f64>> = (0..k).map(|j| points[j * n / k].clone()).collect();
        let cfg = QuantizeConfig::new(k, Algorithm::Batch)
            .with_init(Init::Given(Codebook::new(init.clone(), 2.0).unwrap()))
            .with_iterations(Iterations::Fixed(25));

        let mut classic = init;
        let mut iterates = Vec::new();
        batch_quantize_observed(&sample, &cfg, |_, t, cb| iterates.push((t, cb.to_vecs()))).unwrap();
        for (t, got) in iterates {
            if t > 0 {
                classic = classic_kmeans_step(&points, &classic);
            }
            steps += 1;
            let same = got.iter().flatten().zip(classic.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 5.0;
    verdict(
        8,
        "point-sample reduction",
        pass,
        &format!("{steps} iterates compared bitwise, {mismatches} mismatches, {secs:.2}s"),
    );
    assert!(pass);
}

/// Textbook weighted k-means step on an empirical distribution: every point
/// weighs 1/n, each center moves to the weighted mean of its points, empty
/// clusters stay put.
fn classic_kmeans_step(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = 1.0 / points.len() as f64;
    let d = points[0].len();
    let mut mass = vec![0.0; centers.len()];
    let mut sums = vec![vec![0.0; d]; centers.len()];
    for x in points {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let dist: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best = j;
                best_d = dist;
            }
        }
        mass[best] += w;
        for (s, v) in sums[best].iter_mut().zip(x) {
            *s += w * v;
        }
    }
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| if mass[j] > 0.0 { sums[j].iter().map(|s| s / mass[j]).collect() } else { c.clone() })
        .collect()
}

#[test]
fn c9_determinism() {
    let (rate, _) = rate_first();
    let (parity, _) = parity_first();
    let ((_, results, aggregate), _) = bench_first();
    let rate2 = run_rate(MASTER_SEED);
    let parity2 = run_parity(MASTER_SEED);
    let (_, results2, aggregate2) = run_bench(MASTER_SEED);
    let checks = [
        ("rate", rate.csv == rate2.csv),
        ("parity", parity.csv == parity2.csv),
        ("q1 results", *results == results2),
        ("q1 aggregate", *aggregate == aggregate2),
    ];
    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(name, same)| format!("{name} {}", if *same { "identical" } else { "differs" }))
        .collect();
    verdict(9, "determinism", pass, &detail.join(", "));
    assert!(pass);
}
