//! `trimet` command-line front end: synthetic data, triplet mining, metric
//! training (flat and hierarchical), kNN evaluation, benchmarks and ghost
//! image export.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use matrix_file::{matrix_from_csv, matrix_to_csv};
use trimet::eval::BenchmarkConfig;
use trimet::io::{self, CsvOptions, LabelColumn, SyntheticSpec, MNIST_SURROGATE, ORL_SURROGATE};
use trimet::metric::{default_strengthen, factorize_metric, MetricMatrix, ProjectionMatrix};
use trimet::{Dataset, HierarchicalConfig, MiningStrategy, NegSamplingConfig, SolverConfig};

use config::{parse_list, parse_modes, prepare_dir, require_file, RunConfig};

#[derive(Parser)]
#[command(name = "trimet", version, about = "Triplet mining and Mahalanobis metric learning")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset as CSV.
    Synth(SynthArgs),
    /// Mine triplets and write them as text.
    Mine(MineArgs),
    /// Learn a metric with a single mine-and-solve pass.
    Train(TrainArgs),
    /// Learn a metric with the hierarchical sphere loop.
    TrainHier(TrainHierArgs),
    /// kNN accuracy of a metric on a test set.
    Eval(EvalArgs),
    /// Grid benchmark over strategies, modes and seeds.
    Benchmark(BenchmarkArgs),
    /// Render projection columns as PGM images.
    Ghost(GhostArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV (features then label unless --label-col says otherwise).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Built-in dataset: iris, orl-surrogate or mnist-surrogate.
    #[arg(long, conflicts_with = "input")]
    dataset: Option<String>,
    /// The CSV has a header row.
    #[arg(long)]
    has_header: bool,
    /// Label column: index, header name, or `last`.
    #[arg(long)]
    label_col: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// gaussians, anisotropic_gaussians or concentric; or orl-surrogate / mnist-surrogate.
    #[arg(long, default_value = "gaussians")]
    generator: String,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    strategy: Option<MiningStrategy>,
    #[arg(long)]
    k: Option<usize>,
    /// Metric to mine under (CSV matrix); identity if omitted.
    #[arg(long)]
    metric: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    strategy: Option<MiningStrategy>,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainHierArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    strategy: Option<MiningStrategy>,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of outer rounds.
    #[arg(long)]
    t_outer: Option<usize>,
    /// Write 0 for wall-clock columns so outputs are reproducible.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    has_header: bool,
    #[arg(long)]
    label_col: Option<String>,
    /// Metric CSV; Euclidean if omitted.
    #[arg(long)]
    metric: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Write one predicted label per line here.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Extra CSV datasets to include (repeatable).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Comma-separated built-in datasets (default: iris when no --input).
    #[arg(long)]
    datasets: Option<String>,
    #[arg(long)]
    has_header: bool,
    #[arg(long)]
    label_col: Option<String>,
    /// hier, nonhier or both.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated strategy tags.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    k_values: Option<String>,
    #[arg(long)]
    c_values: Option<String>,
    /// Comma-separated split seeds; default is five seeds from --seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GhostArgs {
    /// Projection matrix CSV (one row per input feature).
    #[arg(long, conflicts_with = "metric")]
    projection: Option<PathBuf>,
    /// Metric CSV; factorized before rendering.
    #[arg(long)]
    metric: Option<PathBuf>,
    /// Optional basis (pixels × features) mapping columns back to pixel space.
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    top_m: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Mine(a) => mine(a, &cfg),
        Command::Train(a) => train(a, &cfg),
        Command::TrainHier(a) => train_hier(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Benchmark(a) => benchmark(a, &cfg),
        Command::Ghost(a) => ghost(a, &cfg),
    }
}

/// Caps the worker pool at `TRIMET_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("TRIMET_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().with_context(|| format!("TRIMET_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        bail!("TRIMET_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn csv_options(has_header: bool, label_col: Option<&str>, cfg: &RunConfig) -> Result<CsvOptions> {
    let label_col = match label_col.or(cfg.label_col.as_deref()) {
        Some(s) => s.parse::<LabelColumn>()?,
        None => LabelColumn::Last,
    };
    Ok(CsvOptions { has_header: has_header || cfg.has_header.unwrap_or(false), label_col })
}

fn builtin_dataset(name: &str, seed: u64) -> Result<(String, Dataset)> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "iris" => ("iris".to_string(), io::iris()),
        "orl" | "orl-surrogate" => (ORL_SURROGATE.name.to_string(), ORL_SURROGATE.generate(seed)?),
        "mnist" | "mnist-surrogate" => (MNIST_SURROGATE.name.to_string(), MNIST_SURROGATE.generate(seed)?),
        other => bail!("unknown dataset `{other}` (known: iris, orl-surrogate, mnist-surrogate)"),
    })
}

/// Where a data-taking command reads from, checked before any work starts.
enum Source {
    File(PathBuf, CsvOptions),
    Builtin(String),
}

impl Source {
    fn resolve(a: &DataArgs, cfg: &RunConfig) -> Result<Self> {
        if let Some(name) = &a.dataset {
            return Ok(Source::Builtin(name.clone()));
        }
        let path = a
            .input
            .clone()
            .or_else(|| cfg.input.clone())
            .ok_or_else(|| anyhow!("no input given (use --input or --dataset)"))?;
        require_file(&path)?;
        Ok(Source::File(path, csv_options(a.has_header, a.label_col.as_deref(), cfg)?))
    }

    fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            Source::File(path, opts) => io::load_csv(path, opts).with_context(|| format!("loading {}", path.display())),
            Source::Builtin(name) => Ok(builtin_dataset(name, seed)?.1),
        }
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    prepare_dir(&dir)?;
    Ok(dir)
}

fn solver_config(a: &SolverArgs, cfg: &RunConfig) -> Result<SolverConfig> {
    let mut s = cfg.solver.unwrap_or_default();
    if let Some(c) = a.c.or(cfg.c) {
        s.c = c;
    }
    if let Some(m) = a.max_iter {
        s.max_iter = m;
    }
    s.validate()?;
    Ok(s)
}

fn neg_sampling(seed: u64, lambda: Option<f64>, cfg: &RunConfig) -> Result<NegSamplingConfig> {
    let mut ns = NegSamplingConfig { seed, ..Default::default() };
    if let Some(l) = lambda.or(cfg.lambda) {
        ns.lambda = l;
    }
    ns.validate()?;
    Ok(ns)
}

fn read_matrix(path: &Path) -> Result<matrix_file::Matrix> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    matrix_from_csv(&text).with_context(|| format!("reading matrix {}", path.display()))
}

fn read_metric(path: &Path) -> Result<MetricMatrix> {
    Ok(MetricMatrix::new(read_matrix(path)?)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    let ds = match a.generator.as_str() {
        "orl-surrogate" | "mnist-surrogate" => builtin_dataset(&a.generator, seed)?.1,
        _ => {
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                generator: a.generator.clone(),
                classes: a.classes.unwrap_or(d.classes),
                per_class: a.per_class.unwrap_or(d.per_class),
                dims: a.dims.unwrap_or(d.dims),
                separation: a.separation.unwrap_or(d.separation),
                noise_std: a.noise_std.unwrap_or(d.noise_std),
            };
            io::generate_synthetic(&spec, seed)?
        }
    };
    io::write_csv(&a.out, &ds)?;
    eprintln!("wrote {} points ({} features) to {}", ds.n(), ds.dim(), a.out.display());
    Ok(())
}

fn mine(a: MineArgs, cfg: &RunConfig) -> Result<()> {
    let source = Source::resolve(&a.data, cfg)?;
    let metric = a.metric.as_deref().map(read_metric).transpose()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone().unwrap_or_default().join("triplets.txt"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    let strategy = a.strategy.or(cfg.strategy).unwrap_or(MiningStrategy::Kbh);
    let k = a.k.or(cfg.k).unwrap_or(3);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ns = neg_sampling(seed, a.lambda, cfg)?;

    let ds = source.load(seed)?;
    let metric = metric.unwrap_or_else(|| MetricMatrix::identity(ds.dim()));
    let triplets = trimet::mine(strategy, &ds, k, &metric, &ns)?;
    write(&out, &triplets.to_text())?;
    eprintln!("{} {} triplets -> {}", triplets.len(), strategy.label(), out.display());
    Ok(())
}

fn train(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let source = Source::resolve(&a.data, cfg)?;
    let dir = out_dir(&a.out_dir, cfg)?;
    let solver = solver_config(&a.solver, cfg)?;
    let strategy = a.strategy.or(cfg.strategy).unwrap_or(MiningStrategy::Kbh);
    let k = a.k.or(cfg.k).unwrap_or(3);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ns = neg_sampling(seed, a.lambda, cfg)?;

    let ds = source.load(seed)?;
    let identity = MetricMatrix::identity(ds.dim());
    let triplets = trimet::mine(strategy, &ds, k, &identity, &ns)?;
    write(&dir.join("triplets.txt"), &triplets.to_text())?;
    if triplets.is_empty() {
        bail!("{} mined no triplets; nothing to learn", strategy.label());
    }
    let res = trimet::solve(&ds, &triplets, &solver, &identity)?;
    write(&dir.join("metric.csv"), &matrix_to_csv(res.metric.as_matrix()))?;
    write(&dir.join("history.csv"), &trimet::solver::history_csv(&res.history))?;
    println!(
        "objective {:.6} -> {:.6} ({} triplets, {} iterations)",
        res.history[0].total,
        res.best.total,
        triplets.len(),
        res.history.len() - 1
    );
    Ok(())
}

fn train_hier(a: TrainHierArgs, cfg: &RunConfig) -> Result<()> {
    let source = Source::resolve(&a.data, cfg)?;
    let dir = out_dir(&a.out_dir, cfg)?;
    let solver = solver_config(&a.solver, cfg)?;
    let strategy = a.strategy.or(cfg.strategy).unwrap_or(MiningStrategy::Kbh);
    let k = a.k.or(cfg.k).unwrap_or(3);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mut hcfg: HierarchicalConfig = cfg.hierarchical.unwrap_or_default();
    hcfg.seed = seed;
    if let Some(t) = a.t_outer {
        hcfg.t_outer = t;
    }
    if let Some(l) = cfg.lambda {
        hcfg.neg_sampling_lambda = l;
    }
    hcfg.validate()?;
    let timing = !a.no_timing && cfg.timing.unwrap_or(true);

    let ds = source.load(seed)?;
    let res = trimet::hierarchical_train(&ds, k, strategy, &hcfg, &solver)?;
    write(&dir.join("projection.csv"), &matrix_to_csv(res.projection.as_matrix()))?;
    write(&dir.join("metric.csv"), &matrix_to_csv(res.metric().as_matrix()))?;
    write(&dir.join("trace.csv"), &trimet::hierarchical::trace_csv(&res.trace, timing))?;
    write(&dir.join("projected.csv"), &io::to_csv(&res.data))?;
    println!("{} rounds, {} spheres learned", hcfg.t_outer, res.trace.len());
    Ok(())
}

fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    require_file(&a.train)?;
    require_file(&a.test)?;
    let metric = a.metric.as_deref().map(read_metric).transpose()?;
    let opts = csv_options(a.has_header, a.label_col.as_deref(), cfg)?;
    let k = a.k.or(cfg.k).unwrap_or(1);

    let train = io::load_csv(&a.train, &opts)?;
    let test = io::load_csv(&a.test, &opts)?;
    if train.dim() != test.dim() {
        bail!("train has {} features but test has {}", train.dim(), test.dim());
    }
    let metric = metric.unwrap_or_else(|| MetricMatrix::identity(train.dim()));
    let predicted = trimet::knn_classify(&train, test.points(), k, &metric)?;
    let acc = trimet::eval::accuracy_pct(&predicted, test.labels());
    if let Some(path) = &a.predictions {
        let lines: String = predicted.iter().map(|p| format!("{p}\n")).collect();
        write(path, &lines)?;
    }
    println!("accuracy {acc:.2}% ({} test points, k={k})", test.n());
    Ok(())
}

fn benchmark(a: BenchmarkArgs, cfg: &RunConfig) -> Result<()> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mut inputs = a.input.clone();
    if inputs.is_empty() {
        inputs.extend(cfg.input.clone());
    }
    for p in &inputs {
        require_file(p)?;
    }
    let names: Vec<String> = match (&a.datasets, &cfg.datasets) {
        (Some(s), _) => parse_list(s, "dataset")?,
        (None, Some(v)) => v.clone(),
        (None, None) if inputs.is_empty() => vec!["iris".to_string()],
        (None, None) => Vec::new(),
    };
    let dir = out_dir(&a.out_dir, cfg)?;

    let d = BenchmarkConfig::default();
    let bcfg = BenchmarkConfig {
        strategies: match &a.strategies {
            Some(s) => parse_list(s, "strategy")?,
            None => cfg.strategies.clone().unwrap_or(d.strategies),
        },
        modes: match a.mode.as_deref().or(cfg.mode.as_deref()) {
            Some(m) => parse_modes(m)?,
            None => d.modes,
        },
        k_values: match &a.k_values {
            Some(s) => parse_list(s, "k")?,
            None => cfg.k_values.clone().unwrap_or(d.k_values),
        },
        c_values: match &a.c_values {
            Some(s) => parse_list(s, "c")?,
            None => cfg.c_values.clone().unwrap_or(d.c_values),
        },
        seeds: match &a.seeds {
            Some(s) => parse_list(s, "seed")?,
            None => cfg.seeds.clone().unwrap_or_else(|| (seed..seed + 5).collect()),
        },
        solver: cfg.solver.unwrap_or_default(),
        hierarchical: cfg.hierarchical.unwrap_or_default(),
        lambda: cfg.lambda.unwrap_or(d.lambda),
        timing: !a.no_timing && cfg.timing.unwrap_or(true),
    };
    bcfg.validate()?;

    let opts = csv_options(a.has_header, a.label_col.as_deref(), cfg)?;
    let mut datasets = Vec::new();
    for name in &names {
        datasets.push(builtin_dataset(name, seed)?);
    }
    for p in &inputs {
        let ds = io::load_csv(p, &opts).with_context(|| format!("loading {}", p.display()))?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string());
        datasets.push((name, ds));
    }

    let report = trimet::run_benchmark(&datasets, &bcfg)?;
    write(&dir.join("report.csv"), &report.to_csv())?;
    write(&dir.join("report.txt"), &report.to_table())?;
    write(&dir.join("trace.csv"), &report.trace_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn ghost(a: GhostArgs, cfg: &RunConfig) -> Result<()> {
    let l = match (&a.projection, &a.metric) {
        (Some(p), _) => ProjectionMatrix::new(read_matrix(p)?)?,
        (None, Some(m)) => {
            let m = read_metric(m)?;
            factorize_metric(&m, default_strengthen(&m))?
        }
        (None, None) => bail!("give --projection or --metric"),
    };
    let basis = a.basis.as_deref().map(read_matrix).transpose()?;
    let dir = out_dir(&a.out_dir, cfg)?;
    let l = match basis {
        Some(b) => {
            if b.ncols() != l.rows() {
                bail!("basis has {} columns but the projection has {} rows", b.ncols(), l.rows());
            }
            ProjectionMatrix::new(b * l.as_matrix())?
        }
        None => l,
    };
    let written = io::export_ghost_images(&l, a.height, a.width, a.top_m, &dir)?;
    eprintln!("wrote {} images to {}", written.len(), dir.display());
    Ok(())
}

/// Plain-text matrix files: one row per line, comma-separated.
mod matrix_file {
    use anyhow::{bail, Result};

    pub type Matrix = trimet::DMatrix<f64>;

    pub fn matrix_to_csv(m: &Matrix) -> String {
        let mut out = String::new();
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1)))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    bail!("line {}: expected {} values, found {}", i + 1, first.len(), row.len());
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            bail!("empty matrix");
        }
        let cols = rows[0].len();
        Ok(Matrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn round_trip_is_exact() {
            let m = Matrix::from_row_slice(2, 3, &[1.0, -0.1, 1e-300, 3.0 / 7.0, 0.0, 2.5e10]);
            assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
        }

        #[test]
        fn ragged_rejected() {
            assert!(matrix_from_csv("1,2\n3\n").is_err());
            assert!(matrix_from_csv("1,x\n").is_err());
            assert!(matrix_from_csv("\n").is_err());
        }
    }
}
