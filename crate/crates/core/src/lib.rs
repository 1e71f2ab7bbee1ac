//! Quantization of the mean measure of a sample of discrete measures,
//! kernel vectorization against the resulting codebook, and clustering of
//! the embedded measures.
//!
//! ```
//! use meanquant::{quantize, Algorithm, DiscreteMeasure, MeasureSample, QuantizeConfig};
//!
//! let a = DiscreteMeasure::uniform(vec![vec![0.0], vec![0.1]], 2.0).unwrap();
//! let b = DiscreteMeasure::uniform(vec![vec![1.0], vec![1.1]], 2.0).unwrap();
//! let sample = MeasureSample::new(vec![a, b], None).unwrap();
//! let (codebook, report) = quantize(&sample, &QuantizeConfig::new(2, Algorithm::Batch)).unwrap();
//! assert_eq!(codebook.k(), 2);
//! assert!(report.final_distortion < 0.01);
//! ```

pub mod cluster;
pub mod error;
pub mod io;
pub mod measure;
pub mod quantize;
pub mod rng;
pub mod synth;
pub mod vectorize;
pub mod verify;

pub use cluster::{
    kmeans_vectors, linf_distances, linkage, nmi, nmi_raw, single_linkage, ClusterLabels, Cut, DistanceMatrix,
    LinkageResult, Merge,
};
pub use error::{Error, Result};
pub use measure::{mean_measure, DiscreteMeasure, MeasureSample, Norm};
pub use quantize::{
    auto_iterations, batch_quantize, cell_stats, distortion, kmeanspp_init, lloyd_step, minibatch_quantize, quantize,
    voronoi_assign, Algorithm, CellStats, Codebook, EmptyCellPolicy, Init, Iterations, QuantizeConfig, QuantizeReport,
};
pub use synth::{gen_centers, gen_sample, run_q1, run_q2, BenchOutput, BenchResult, HarnessOptions, Method, MixtureSpec};
pub use vectorize::{
    check_kernel, default_sigma, kernel_eval, vectorize, vectorize_sample, Embedding, Kernel, KernelCheck,
    VectorizeConfig,
};
pub use verify::{
    brute_force_kmeans, check_concentration, check_shattering, codebook_diagnostics, w1_exact, BruteForceOptimum,
    ConcentrationResult, ShatteringCertificate,
};
