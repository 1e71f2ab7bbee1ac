use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use meanquant::io;
use meanquant::synth::{self, HarnessOptions, Method, MixtureSpec, Q2_BUDGET};
use meanquant::vectorize::DEFAULT_GRID_STEP;
use meanquant::{
    check_concentration, check_kernel, check_shattering, default_sigma, kmeans_vectors, linf_distances, nmi_raw,
    quantize, single_linkage, vectorize_sample, Algorithm, Cut, EmptyCellPolicy, Error, Init, Iterations, Kernel,
    QuantizeConfig, VectorizeConfig,
};

const FORMATS: &str = "\
Formats:
  sample NDJSON   first line {\"ambient_dim\": d, \"ball_radius\": R, \"labels\": [1, ...]?}, then one {\"points\": [[..], ..], \"weights\": [..]} per measure
  codebook JSON   {\"ambient_dim\": d, \"ball_radius\": R, \"codepoints\": [[..], ..]}
  embedding CSV   header v1,...,vk[,label]; one row per measure
  labels CSV      header cluster; one 1-based cluster id per row
  mixture JSON    {\"d\", \"L\", \"p\", \"r\", \"N\", \"sphere_radius\"?, \"n_per_class\"?, \"noise_sd\"?}
  results CSV     method,sweep_name,sweep_value,rep,nmi,wall_ms
  aggregate CSV   method,sweep_name,sweep_value,reps,mean,ci95

Every command writes <output>.config.json holding the resolved parameters.
Exit codes: 0 ok, 1 check failed, 2 bad configuration, 3 bad or missing data.";

#[derive(Parser)]
#[command(name = "meanquant", version, about = "Mean-measure quantization, kernel vectorization and clustering of measure samples", after_long_help = FORMATS)]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a codebook from the mean measure of a sample (writes codebook JSON and <output>.report.json).
    Quantize(QuantizeArgs),
    /// Embed every measure of a sample against a codebook (writes embedding CSV).
    Vectorize(VectorizeArgs),
    /// Cluster the rows of an embedding (writes labels CSV, prints NMI when ground truth is known).
    Cluster(ClusterArgs),
    /// Run a synthetic mixture benchmark (writes results CSV and <output>.aggregate.csv).
    Bench(BenchArgs),
    /// Draw a labeled sample from a mixture spec (writes sample NDJSON).
    Generate(GenerateArgs),
    /// Check the (p, delta)-kernel conditions (exit 1 on failure).
    KernelCheck(KernelCheckArgs),
    /// Check shattering and concentration of a labeled sample (exit 1 on failure).
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AlgoArg {
    Batch,
    Minibatch,
    MinibatchNosplit,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EmptyCellArg {
    Keep,
    Reseed,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelArg {
    Psi0,
    Exp,
    Gauss,
    Laplace,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Kernel {
        match k {
            KernelArg::Psi0 => Kernel::Psi0,
            KernelArg::Exp => Kernel::Exponential,
            KernelArg::Gauss => Kernel::Gaussian,
            KernelArg::Laplace => Kernel::Laplace,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ClusterMethod {
    SingleLinkage,
    Kmeans,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Protocol {
    Q1,
    Q2,
}

#[derive(Args, Serialize)]
struct QuantizeArgs {
    /// Sample NDJSON.
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "batch")]
    algo: AlgoArg,
    /// Lloyd steps or mini-batches: a number or `auto`.
    #[arg(long, default_value = "auto")]
    iters: String,
    /// Measures per mini-batch when --iters is auto.
    #[arg(long, default_value_t = meanquant::quantize::DEFAULT_MINIBATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `kmeanspp` or the path of a codebook JSON.
    #[arg(long, default_value = "kmeanspp")]
    init: String,
    #[arg(long, value_enum, default_value = "keep")]
    empty_cell: EmptyCellArg,
    /// k-means++ initializations; the lowest distortion wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Codebook JSON.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct VectorizeArgs {
    /// Sample NDJSON.
    input: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, value_enum, default_value = "exp")]
    kernel: KernelArg,
    /// A positive number or `auto` (half the smallest codepoint gap).
    #[arg(long, default_value = "auto")]
    sigma: String,
    /// Embedding CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    /// Embedding CSV.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "kmeans")]
    method: ClusterMethod,
    /// Single-linkage merge threshold on L-infinity distances.
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Number of clusters (k-means, or a single-linkage cut by count).
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labels CSV with the true classes (defaults to the embedding's label column).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Labels CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(value_enum)]
    protocol: Protocol,
    /// Mixture spec JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "atol,rand,grid,histogram")]
    methods: Vec<String>,
    /// Budgets swept by q1.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    budgets: Vec<usize>,
    /// Signal levels swept by q2.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    signals: Vec<f64>,
    /// Budget held fixed by q2.
    #[arg(long, default_value_t = Q2_BUDGET)]
    budget: usize,
    /// k-means initializations of the final clustering.
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write wall_ms as 0 so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Results CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    /// Mixture spec JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample NDJSON.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct KernelCheckArgs {
    #[arg(long, value_enum)]
    kernel: KernelArg,
    #[arg(long)]
    p: u32,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    /// Certificate JSON (printed to stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Labeled sample NDJSON.
    input: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value_t = 1)]
    p: u32,
    #[arg(long)]
    r: f64,
    /// Required mass gap.
    #[arg(long)]
    gap: f64,
    /// Concentration radius (default r * gap / 4).
    #[arg(long)]
    w: Option<f64>,
    /// Certificate JSON (printed to stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() { 2 } else { 3 };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn data_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: format!("{}: {e}", path.display()) }
}

type CmdResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Quantize(a) => cmd_quantize(a),
        Command::Vectorize(a) => cmd_vectorize(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
        Command::KernelCheck(a) => cmd_kernel_check(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn open(path: &Path) -> std::result::Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| data_error(path, e))
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| data_error(path, e))
}

/// `dir/name.ext` becomes `dir/name.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Data errors carry the offending path.
fn read_with<T>(path: &Path, f: impl FnOnce(BufReader<File>) -> meanquant::Result<T>) -> std::result::Result<T, Failure> {
    f(open(path)?).map_err(|e| {
        let failure = Failure::from(e);
        Failure { message: format!("{}: {}", path.display(), failure.message), ..failure }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::result::Result<(), Failure> {
    let mut w = create(path)?;
    io::write_json(value, &mut w)?;
    w.flush().map_err(|e| data_error(path, e))
}

#[derive(Serialize)]
struct RunConfig<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
    resolved: R,
}

fn write_config<A: Serialize, R: Serialize>(out: &Path, command: &str, args: &A, resolved: R) -> std::result::Result<(), Failure> {
    let cfg = RunConfig { command, version: env!("CARGO_PKG_VERSION"), args, resolved };
    write_json(&sidecar(out, "config.json"), &cfg)
}

fn cmd_quantize(a: QuantizeArgs) -> CmdResult {
    if a.k == 0 {
        return Err(config_error("--k must be at least 1"));
    }
    let iterations = match a.iters.as_str() {
        "auto" => Iterations::Auto,
        s => match s.parse::<usize>() {
            Ok(n) if n > 0 => Iterations::Fixed(n),
            _ => return Err(config_error(format!("--iters must be a positive integer or auto, got {s:?}"))),
        },
    };
    let algorithm = match a.algo {
        AlgoArg::Batch => Algorithm::Batch,
        AlgoArg::Minibatch => Algorithm::MiniBatch,
        AlgoArg::MinibatchNosplit => Algorithm::MiniBatchNoSplit,
    };
    let policy = match a.empty_cell {
        EmptyCellArg::Keep => EmptyCellPolicy::Keep,
        EmptyCellArg::Reseed => EmptyCellPolicy::ReseedFarthest,
    };
    let sample = read_with(&a.input, io::read_sample)?;
    let init = if a.init == "kmeanspp" {
        Init::KMeansPlusPlus
    } else {
        Init::Given(read_with(Path::new(&a.init), io::read_codebook)?)
    };
    let cfg = QuantizeConfig::new(a.k, algorithm)
        .with_iterations(iterations)
        .with_minibatch_size(a.batch_size)
        .with_seed(a.seed)
        .with_init(init)
        .with_policy(policy)
        .with_restarts(a.restarts);
    let (codebook, report) = quantize(&sample, &cfg)?;

    let mut w = create(&a.output)?;
    io::write_codebook(&codebook, &mut w)?;
    w.flush().map_err(|e| data_error(&a.output, e))?;
    write_json(&sidecar(&a.output, "report.json"), &report)?;
    #[derive(Serialize)]
    struct Resolved {
        iterations_planned: usize,
        n_measures: usize,
    }
    write_config(
        &a.output,
        "quantize",
        &a,
        Resolved { iterations_planned: report.iterations_planned, n_measures: report.n_measures },
    )?;
    Ok(0)
}

fn cmd_vectorize(a: VectorizeArgs) -> CmdResult {
    let sigma_arg = if a.sigma == "auto" {
        None
    } else {
        match a.sigma.parse::<f64>() {
            Ok(s) if s > 0.0 && s.is_finite() => Some(s),
            _ => return Err(config_error(format!("--sigma must be a positive number or auto, got {:?}", a.sigma))),
        }
    };
    let sample = read_with(&a.input, io::read_sample)?;
    let codebook = read_with(&a.codebook, io::read_codebook)?;
    if codebook.dim() != sample.dim() {
        return Err(Error::DimensionMismatch { expected: sample.dim(), found: codebook.dim() }.into());
    }
    let sigma = sigma_arg.unwrap_or_else(|| default_sigma(&codebook));
    let cfg = VectorizeConfig::new(a.kernel.into(), sigma)?;
    let embedding = vectorize_sample(&sample, &codebook, &cfg)?;
    let mut w = create(&a.output)?;
    io::write_embedding(&embedding, &mut w)?;
    w.flush().map_err(|e| data_error(&a.output, e))?;
    write_config(&a.output, "vectorize", &a, cfg)?;
    Ok(0)
}

fn cmd_cluster(a: ClusterArgs) -> CmdResult {
    let cut = match a.method {
        ClusterMethod::SingleLinkage => match (a.tau, a.n_clusters) {
            (Some(t), None) if t >= 0.0 => Some(Cut::Threshold(t)),
            (Some(t), None) => return Err(config_error(format!("--tau must be non-negative, got {t}"))),
            (None, Some(l)) if l > 0 => Some(Cut::Clusters(l)),
            _ => return Err(config_error("single-linkage needs exactly one of --tau or --n-clusters >= 1")),
        },
        ClusterMethod::Kmeans => {
            if a.n_clusters.unwrap_or(0) == 0 {
                return Err(config_error("k-means needs --n-clusters >= 1"));
            }
            if a.restarts == 0 {
                return Err(config_error("--restarts must be at least 1"));
            }
            None
        }
    };
    let embedding = read_with(&a.input, io::read_embedding)?;
    let labels = match cut {
        Some(cut) => single_linkage(&linf_distances(&embedding), cut)?,
        None => kmeans_vectors(&embedding, a.n_clusters.unwrap(), a.restarts, a.seed)?,
    };
    let truth = match &a.truth {
        Some(path) => Some(read_with(path, io::read_labels)?),
        None => embedding.labels.clone(),
    };
    let score = match &truth {
        Some(t) => Some(nmi_raw(&labels.assignments, t)?),
        None => None,
    };
    let mut w = create(&a.output)?;
    io::write_labels(&labels.assignments, &mut w)?;
    w.flush().map_err(|e| data_error(&a.output, e))?;
    #[derive(Serialize)]
    struct Resolved {
        n_clusters: usize,
        nmi: Option<f64>,
    }
    write_config(&a.output, "cluster", &a, Resolved { n_clusters: labels.n_clusters, nmi: score })?;
    if let Some(s) = score {
        println!("NMI {s}");
    }
    Ok(0)
}

fn read_spec(path: &Path) -> std::result::Result<MixtureSpec, Failure> {
    let spec: MixtureSpec = serde_json::from_reader(open(path)?)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let spec = read_spec(&a.config)?;
    let methods = a
        .methods
        .iter()
        .map(|m| Method::parse(m.trim()).ok_or_else(|| config_error(format!("unknown method {m:?}"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let opts = HarnessOptions { restarts: a.restarts, record_timing: !a.no_timing, ..HarnessOptions::default() };
    let out = match a.protocol {
        Protocol::Q1 => synth::run_q1(&spec, &a.budgets, &methods, a.reps, a.seed, &opts)?,
        Protocol::Q2 => synth::run_q2(&spec, &a.signals, a.budget, &methods, a.reps, a.seed, &opts)?,
    };
    let mut w = create(&a.output)?;
    io::write_results(&out.records, &mut w)?;
    w.flush().map_err(|e| data_error(&a.output, e))?;
    let agg_path = sidecar(&a.output, "aggregate.csv");
    let mut w = create(&agg_path)?;
    io::write_aggregate(&out.results, &mut w)?;
    w.flush().map_err(|e| data_error(&agg_path, e))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        spec: &'a MixtureSpec,
        options: &'a HarnessOptions,
    }
    write_config(&a.output, "bench", &a, Resolved { spec: &spec, options: &opts })?;
    for r in &out.results {
        println!("{:<10} {}={:<6} NMI {:.3} ± {:.3}", r.method.name(), r.sweep_name, r.sweep_value, r.mean, r.ci95);
    }
    Ok(0)
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let spec = read_spec(&a.config)?;
    let (sample, centers) = synth::gen_sample(&spec, a.seed)?;
    let mut w = create(&a.output)?;
    io::write_sample(&sample, &mut w)?;
    w.flush().map_err(|e| data_error(&a.output, e))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        spec: &'a MixtureSpec,
        centers: &'a synth::MixtureCenters,
    }
    write_config(&a.output, "generate", &a, Resolved { spec: &spec, centers: &centers })?;
    Ok(0)
}

fn emit<T: Serialize>(path: Option<&Path>, value: &T) -> std::result::Result<(), Failure> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let stdout = std::io::stdout();
            io::write_json(value, stdout.lock())?;
            Ok(())
        }
    }
}

fn cmd_kernel_check(a: KernelCheckArgs) -> CmdResult {
    if a.p == 0 {
        return Err(config_error("--p must be at least 1"));
    }
    let kernel: Kernel = a.kernel.into();
    let check = check_kernel(kernel, a.p, a.delta, a.grid_step)?;
    #[derive(Serialize)]
    struct Certificate {
        kernel: Kernel,
        p: u32,
        delta: f64,
        grid_step: f64,
        passed: bool,
        #[serde(flatten)]
        check: meanquant::KernelCheck,
    }
    let cert = Certificate { kernel, p: a.p, delta: a.delta, grid_step: a.grid_step, passed: check.passed(), check };
    emit(a.output.as_deref(), &cert)?;
    if let Some(out) = &a.output {
        write_config(out, "kernel-check", &a, ())?;
    }
    Ok(if check.passed() { 0 } else { 1 })
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    if !(a.r > 0.0) || !(a.gap > 0.0) || a.p == 0 {
        return Err(config_error("verify needs --p >= 1, --r > 0 and --gap > 0"));
    }
    let w = a.w.unwrap_or(a.r * a.gap / 4.0);
    if !(w >= 0.0) {
        return Err(config_error(format!("--w must be non-negative, got {w}")));
    }
    let sample = read_with(&a.input, io::read_sample)?;
    let codebook = read_with(&a.codebook, io::read_codebook)?;
    let shattering = check_shattering(&sample, &codebook, a.p, a.r, a.gap)?;
    let concentration = check_concentration(&sample, w)?;
    let passed = shattering.satisfied && concentration.concentrated;
    #[derive(Serialize)]
    struct Certificate {
        passed: bool,
        shattering: meanquant::ShatteringCertificate,
        concentration: meanquant::ConcentrationResult,
    }
    emit(a.output.as_deref(), &Certificate { passed, shattering, concentration })?;
    if let Some(out) = &a.output {
        write_config(out, "verify", &a, ())?;
    }
    Ok(if passed { 0 } else { 1 })
}
