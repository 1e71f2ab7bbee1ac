use meanquant::quantize::minibatch_step;
use meanquant::*;
use proptest::collection::vec;
use proptest::prelude::*;

const R: f64 = 4.0;

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-1.0..1.0f64, d).prop_map(move |p| p.into_iter().map(|x| x * R / (d as f64).sqrt() * 0.99).collect())
}

fn measure(d: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (1..=max_atoms).prop_flat_map(move |n| {
        (vec(point(d), n), vec(0.05..3.0f64, n)).prop_map(|(p, w)| DiscreteMeasure::new(p, w, R).unwrap())
    })
}

fn sample(d: usize, max_n: usize, max_atoms: usize) -> impl Strategy<Value = MeasureSample> {
    vec(measure(d, max_atoms), 1..=max_n).prop_map(|ms| MeasureSample::new(ms, None).unwrap())
}

fn codebook(d: usize, max_k: usize) -> impl Strategy<Value = Codebook> {
    vec(point(d), 1..=max_k).prop_map(|c| Codebook::new(c, R).unwrap())
}

fn with_dim<T: std::fmt::Debug>(f: impl Fn(usize) -> BoxedStrategy<T> + 'static) -> impl Strategy<Value = T> {
    (1..=3usize).prop_flat_map(f)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_mass_of_mean_is_mean_of_ball_masses(
        (s, c, r) in with_dim(|d| (sample(d, 5, 6), point(d), 0.0..3.0f64).boxed())
    ) {
        let mean = mean_measure(&s).unwrap();
        for norm in [Norm::Euclidean, Norm::Linf] {
            let direct = mean.ball_mass(&c, r, norm).unwrap();
            let avg = s.measures().iter().map(|m| m.ball_mass(&c, r, norm).unwrap()).sum::<f64>() / s.len() as f64;
            prop_assert!(close(direct, avg, 1e-12));
        }
        prop_assert!(mean.total_mass() <= s.mass_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn ball_mass_is_monotone_in_radius(
        (m, c, r1, r2) in with_dim(|d| (measure(d, 8), point(d), 0.0..3.0f64, 0.0..3.0f64).boxed())
    ) {
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        prop_assert!(m.ball_mass(&c, lo, Norm::Euclidean).unwrap() <= m.ball_mass(&c, hi, Norm::Euclidean).unwrap());
        prop_assert!(m.ball_mass(&c, hi, Norm::Euclidean).unwrap() <= m.ball_mass(&c, hi, Norm::Linf).unwrap());
    }

    #[test]
    fn cells_partition_the_mass(
        (m, cb) in with_dim(|d| (measure(d, 12), codebook(d, 6)).boxed())
    ) {
        let stats = cell_stats(&cb, &m).unwrap();
        prop_assert!(close(stats.masses.iter().sum::<f64>(), m.total_mass(), 1e-12));
        for (u, _) in m.atoms() {
            let j = voronoi_assign(&cb, u).unwrap();
            let dj = meanquant::measure::sq_dist(u, cb.codepoint(j));
            for (i, c) in cb.codepoints().enumerate() {
                let di = meanquant::measure::sq_dist(u, c);
                prop_assert!(dj < di || (dj == di && j <= i));
            }
        }
    }

    #[test]
    fn lloyd_never_increases_distortion(
        (m, cb) in with_dim(|d| (measure(d, 15), codebook(d, 6)).boxed())
    ) {
        let mut cur = cb;
        let mut before = distortion(&cur, &m).unwrap();
        for _ in 0..4 {
            cur = lloyd_step(&cur, &m, EmptyCellPolicy::Keep).unwrap();
            let after = distortion(&cur, &m).unwrap();
            prop_assert!(after <= before * (1.0 + 1e-12) + 1e-300);
            before = after;
        }
    }

    #[test]
    fn distortion_is_invariant_under_rigid_motions(
        (m, cb, angle, shift) in (measure(2, 8), codebook(2, 4), 0.0..std::f64::consts::TAU, point(2))
    ) {
        let (s, c) = angle.sin_cos();
        let mv = |p: &[f64]| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]];
        let big = 3.0 * R;
        let m2 = DiscreteMeasure::new(m.points().map(mv).collect(), m.weights().to_vec(), big).unwrap();
        let cb2 = Codebook::new(cb.codepoints().map(mv).collect(), big).unwrap();
        prop_assert!(close(distortion(&cb, &m).unwrap(), distortion(&cb2, &m2).unwrap(), 1e-9));
    }

    #[test]
    fn distortion_scales_quadratically(
        (m, cb, a) in with_dim(|d| (measure(d, 8), codebook(d, 4), 0.1..3.0f64).boxed())
    ) {
        let m2 = DiscreteMeasure::new(
            m.points().map(|p| p.iter().map(|x| x * a).collect()).collect(),
            m.weights().to_vec(),
            R * a,
        )
        .unwrap();
        let cb2 = Codebook::new(cb.codepoints().map(|p| p.iter().map(|x| x * a).collect()).collect(), R * a).unwrap();
        prop_assert!(close(distortion(&cb2, &m2).unwrap(), a * a * distortion(&cb, &m).unwrap(), 1e-10));
    }

    #[test]
    fn quantization_is_deterministic(
        (s, k, seed) in with_dim(|d| (sample(d, 6, 5), 1..5usize, any::<u64>()).boxed())
    ) {
        for algo in [Algorithm::Batch, Algorithm::MiniBatchNoSplit] {
            let cfg = QuantizeConfig::new(k, algo).with_seed(seed).with_minibatch_size(2);
            prop_assert_eq!(quantize(&s, &cfg).unwrap(), quantize(&s, &cfg).unwrap());
        }
    }

    #[test]
    fn minibatch_stays_in_ball(
        (cb, a, b, t) in with_dim(|d| (codebook(d, 5), measure(d, 6), measure(d, 6), 0..5usize).boxed())
    ) {
        let next = minibatch_step(&cb, &a, &b, t);
        for c in next.codepoints() {
            prop_assert!(meanquant::measure::norm(c) <= R * (1.0 + 1e-12));
        }
    }

    #[test]
    fn embeddings_are_bounded_and_lipschitz(
        (m, cb, eps, sigma, dir) in (measure(2, 8), codebook(2, 5), 0.0..0.5f64, 0.2..3.0f64, vec(point(2), 8))
    ) {
        let moved: Vec<Vec<f64>> = m
            .points()
            .zip(dir.iter().cycle())
            .map(|(p, d)| {
                let len = meanquant::measure::norm(d).max(1e-12);
                p.iter().zip(d).map(|(x, v)| x + eps * v / len).collect()
            })
            .collect();
        let m2 = DiscreteMeasure::new(moved, m.weights().to_vec(), R + 1.0).unwrap();
        for kernel in [Kernel::Psi0, Kernel::Exponential, Kernel::Gaussian] {
            let cfg = VectorizeConfig::new(kernel, sigma).unwrap();
            let v = vectorize(&m, &cb, &cfg).unwrap();
            let v2 = vectorize(&m2, &cb, &cfg).unwrap();
            for (x, y) in v.iter().zip(&v2) {
                prop_assert!(*x >= 0.0 && *x <= m.total_mass() * (1.0 + 1e-12));
                prop_assert!((x - y).abs() <= m.total_mass() * eps / sigma * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn nmi_is_symmetric_and_label_blind(
        (a, b, shift) in (1..6usize).prop_flat_map(|n| (vec(0..4usize, n * 3), vec(0..3usize, n * 3), 1..100usize))
    ) {
        let ab = nmi_raw(&a, &b).unwrap();
        prop_assert!((ab - nmi_raw(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        let relabeled: Vec<usize> = a.iter().map(|x| (x * 7 + shift) % 1000).collect();
        prop_assert!((ab - nmi_raw(&relabeled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((nmi_raw(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12 || a.iter().all(|&x| x == a[0]));
    }

    #[test]
    fn single_linkage_refines_as_threshold_drops(
        (rows, t1, t2) in (2..12usize).prop_flat_map(|n| (vec(vec(0.0..5.0f64, 3), n), 0.0..4.0f64, 0.0..4.0f64))
    ) {
        let e = Embedding::new(rows, None).unwrap();
        let dist = linf_distances(&e);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let fine = single_linkage(&dist, Cut::Threshold(lo)).unwrap();
        let coarse = single_linkage(&dist, Cut::Threshold(hi)).unwrap();
        prop_assert!(fine.n_clusters >= coarse.n_clusters);
        for i in 0..e.n() {
            for j in 0..e.n() {
                if fine.assignments[i] == fine.assignments[j] {
                    prop_assert_eq!(coarse.assignments[i], coarse.assignments[j]);
                }
            }
        }
    }

    #[test]
    fn shattering_weakens_with_gap(
        (ms, cb, g1, g2) in (vec(measure(1, 4), 4), codebook(1, 3), 0.01..2.0f64, 0.01..2.0f64)
    ) {
        let s = MeasureSample::new(ms, Some(vec![1, 1, 2, 2])).unwrap();
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        let strict = check_shattering(&s, &cb, 1, 0.5, hi).unwrap().satisfied;
        let loose = check_shattering(&s, &cb, 1, 0.5, lo).unwrap().satisfied;
        prop_assert!(!strict || loose);
    }

    #[test]
    fn w1_is_a_metric_on_the_line(
        (x, y, z) in (vec(-3.0..3.0f64, 1..6), vec(-3.0..3.0f64, 1..6), vec(-3.0..3.0f64, 1..6))
    ) {
        let mk = |v: &Vec<f64>| {
            let n = v.len() as f64;
            DiscreteMeasure::new(v.iter().map(|&t| vec![t]).collect(), vec![1.0 / n; v.len()], R).unwrap()
        };
        let (a, b, c) = (mk(&x), mk(&y), mk(&z));
        let ab = w1_exact(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(w1_exact(&a, &a).unwrap().abs() < 1e-12);
        prop_assert!((ab - w1_exact(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= w1_exact(&a, &c).unwrap() + w1_exact(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn w1_uniform_2d_is_symmetric_and_bounded(
        (x, y) in (2..6usize).prop_flat_map(|n| (vec(point(2), n), vec(point(2), n)))
    ) {
        let a = DiscreteMeasure::uniform(x.clone(), R).unwrap();
        let b = DiscreteMeasure::uniform(y.clone(), R).unwrap();
        let ab = w1_exact(&a, &b).unwrap();
        prop_assert!((ab - w1_exact(&b, &a).unwrap()).abs() < 1e-9);
        // the identity coupling is feasible, so it bounds the optimum
        let identity: f64 = x.iter().zip(&y).map(|(p, q)| Norm::Euclidean.distance(p, q)).sum();
        prop_assert!(ab <= identity + 1e-12);
        let mut reversed = y.clone();
        reversed.reverse();
        let flipped: f64 = x.iter().zip(&reversed).map(|(p, q)| Norm::Euclidean.distance(p, q)).sum();
        prop_assert!(ab <= flipped + 1e-12);
    }

    #[test]
    fn brute_force_lower_bounds_lloyd(
        (m, k, seed) in with_dim(|d| (measure(d, 7), 1..4usize, any::<u64>()).boxed())
    ) {
        let k = k.min(m.len());
        let opt = brute_force_kmeans(&m, k).unwrap();
        let s = MeasureSample::new(vec![m], None).unwrap();
        let (_, report) = batch_quantize(&s, &QuantizeConfig::new(k, Algorithm::Batch).with_seed(seed)).unwrap();
        prop_assert!(report.final_distortion >= opt.distortion - 1e-12 * (1.0 + opt.distortion));
    }
}
