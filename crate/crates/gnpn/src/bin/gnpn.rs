use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gnpn::{
    apply_transforms, exact_sigma_pi, gen_erdos_renyi, gen_galton_watson, learn, predict,
    run_experiment, sample_gaussian, score, write_report_csv, ErConfig, Error, ExperimentConfig,
    ExperimentMode, GraphStructure, GwConfig, LearnOpts, LearnResult, PrecisionModel, RngStream,
    SampleBatch, SeriesConfig, TransformSelector, TransformSpec, WeightScale,
};

/// Structure recovery for transformed Gaussian data: model generation,
/// sampling, exact covariance, estimation, and Monte-Carlo experiments.
#[derive(Parser)]
#[command(name = "gnpn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random ground-truth precision model as JSON.
    GenGraph(GenGraphArgs),
    /// Draw Gaussian samples from a model into a CSV table.
    Sample(SampleArgs),
    /// Apply coordinate transforms to a sample CSV.
    Transform(TransformArgs),
    /// Exact covariance of a transformed model plus first-order predictions.
    ExactCov(ExactCovArgs),
    /// Run the structure estimator on a sample CSV.
    Learn(LearnArgs),
    /// Run a Monte-Carlo experiment described by flags or a JSON config.
    Experiment(ExperimentArgs),
    /// Score a learned graph against the ground truth.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Erdős–Rényi skeleton.
    Er,
    /// Galton–Watson tree skeleton.
    Gw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// Reduced trial counts for interactive runs.
    Desk,
    /// Paper-scale trial counts.
    Full,
}

#[derive(Args)]
struct GenGraphArgs {
    /// Skeleton family to draw from.
    #[arg(long, value_enum, default_value = "er")]
    model: ModelKind,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stream id under the seed; distinct streams are independent.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Mean child count for the Galton–Watson family.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    /// Read the 0.3 edge-weight scale as a variance instead of a standard
    /// deviation.
    #[arg(long)]
    weight_var: bool,
    /// Keep models with ‖B‖ >= 1 instead of rejecting them.
    #[arg(long)]
    allow_large_b: bool,
    /// Output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Model JSON produced by gen-graph.
    #[arg(long)]
    model: PathBuf,
    /// Number of rows to draw.
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    /// Input CSV of samples, one column per variable.
    #[arg(long)]
    input: PathBuf,
    /// Transform name, or a comma-separated list with one name per
    /// column. Use "mixed:a,b" to draw uniformly per column.
    #[arg(long, conflicts_with = "selector")]
    transform: Option<String>,
    /// Transform selector as a JSON file (alternative to --transform).
    #[arg(long)]
    selector: Option<PathBuf>,
    /// Seed for resolving mixed pools.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExactCovArgs {
    /// Model JSON produced by gen-graph.
    #[arg(long)]
    model: PathBuf,
    /// Transform name, or a comma-separated list with one name per
    /// variable.
    #[arg(long, default_value = "cube")]
    transform: String,
    /// Output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// Input CSV of transformed samples.
    #[arg(long)]
    input: PathBuf,
    /// Skip the knee search and cut at this threshold instead.
    #[arg(long)]
    threshold: Option<f64>,
    /// Continue past a failed applicability check instead of erroring.
    #[arg(long)]
    permissive: bool,
    /// Also write the sorted precision magnitudes (rank, i, j, value) as
    /// CSV for elbow plots.
    #[arg(long)]
    triangle_out: Option<PathBuf>,
    /// Output path for the result JSON (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment mode (required unless --config provides one).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_trials: Option<usize>,
    /// Transform name, or "mixed:a,b" for a per-variable uniform draw.
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count preset: desk = 200 trials (500 for the applicability
    /// study), full = 1000. An explicit --n-trials wins.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Keep models with ‖B‖ >= 1 in recovery modes.
    #[arg(long)]
    allow_large_b: bool,
    /// Mean child count for Galton–Watson mode.
    #[arg(long)]
    lambda: Option<f64>,
    /// Dimension grid for the applicability-proportion sweep, e.g.
    /// "5,10,15,20".
    #[arg(long)]
    dims: Option<String>,
    /// Sample-size grid for the sample-efficiency sweep.
    #[arg(long)]
    n_grid: Option<String>,
    /// Report JSON path (stdout when omitted; overrides the config's
    /// output path).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the per-trial rows as flat CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Ground-truth graph: a model JSON, a learn result, or a bare graph.
    #[arg(long)]
    truth: PathBuf,
    /// Learned graph in any of the same formats.
    #[arg(long)]
    learned: PathBuf,
    /// Output path (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenGraph(args) => gen_graph_cmd(args),
        Command::Sample(args) => sample_cmd(args),
        Command::Transform(args) => transform_cmd(args),
        Command::ExactCov(args) => exact_cov_cmd(args),
        Command::Learn(args) => learn_cmd(args),
        Command::Experiment(args) => experiment_cmd(args),
        Command::Score(args) => score_cmd(args),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            let mut wr = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut wr, value)?;
            writeln!(wr)?;
            wr.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut wr = stdout.lock();
            serde_json::to_writer_pretty(&mut wr, value)?;
            writeln!(wr)?;
        }
    }
    Ok(())
}

fn with_csv_out(out: Option<&Path>, f: impl FnOnce(&mut dyn io::Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            let mut wr = BufWriter::new(file);
            f(&mut wr)?;
            wr.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut wr = stdout.lock();
            f(&mut wr)?;
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file =
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
}

/// Re-derives the edge set and norms from the stored matrix so that a
/// hand-edited file cannot smuggle in stale metadata.
fn load_model(path: &Path) -> Result<PrecisionModel> {
    let stored: PrecisionModel = read_json(path)?;
    PrecisionModel::from_matrix(stored.gamma_rho().clone())
        .with_context(|| format!("invalid precision matrix in {}", path.display()))
}

fn load_batch(path: &Path) -> Result<SampleBatch> {
    let file =
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    SampleBatch::from_csv_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
}

/// Accepts a bare graph, a gen-graph model (field "structure"), or a
/// learn result (field "graph").
fn load_graph(path: &Path) -> Result<GraphStructure> {
    let value: serde_json::Value = read_json(path)?;
    let candidate = if value.get("dim").is_some() && value.get("edges").is_some() {
        value.clone()
    } else if let Some(s) = value.get("structure") {
        s.clone()
    } else if let Some(g) = value.get("graph") {
        g.clone()
    } else {
        bail!("{} contains no recognizable graph", path.display());
    };
    let raw: GraphStructure = serde_json::from_value(candidate)
        .with_context(|| format!("cannot parse graph in {}", path.display()))?;
    Ok(GraphStructure::new(raw.dim(), raw.edges().to_vec())?)
}

fn parse_selector(input: &str) -> Result<TransformSelector> {
    if let Some(pool) = input.strip_prefix("mixed:") {
        let names: Vec<&str> = pool.split(',').map(str::trim).collect();
        if names.is_empty() || names.iter().any(|n| n.is_empty()) {
            bail!("empty name in mixed pool {input:?}");
        }
        Ok(TransformSelector::mixed(&names))
    } else {
        Ok(TransformSelector::named(input.trim()))
    }
}

/// One name broadcasts to every column; a comma-separated list must match
/// the column count exactly.
fn parse_transform_list(input: &str, dim: usize) -> Result<Vec<TransformSpec>> {
    let names: Vec<&str> = input.split(',').map(str::trim).collect();
    let specs: Vec<TransformSpec> = names
        .iter()
        .map(|n| gnpn::transforms::builtin(n))
        .collect::<gnpn::Result<_>>()?;
    match specs.len() {
        1 => Ok(vec![specs[0].clone(); dim]),
        n if n == dim => Ok(specs),
        n => bail!("{n} transform names for {dim} variables"),
    }
}

fn gen_graph_cmd(args: GenGraphArgs) -> Result<()> {
    let scale_kind = if args.weight_var {
        WeightScale::Variance
    } else {
        WeightScale::StdDev
    };
    let stream = RngStream::new(args.seed, args.stream);
    let model = match args.model {
        ModelKind::Er => {
            let cfg = ErConfig {
                scale_kind,
                enforce_b_norm: !args.allow_large_b,
                ..ErConfig::default()
            };
            gen_erdos_renyi(args.dim, stream, &cfg)?
        }
        ModelKind::Gw => {
            let cfg = GwConfig {
                scale_kind,
                enforce_b_norm: !args.allow_large_b,
                ..GwConfig::default()
            };
            gen_galton_watson(args.dim, args.lambda, stream, &cfg)?
        }
    };
    write_json(&model, args.out.as_deref())
}

fn sample_cmd(args: SampleArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let batch = sample_gaussian(&model, args.n, RngStream::new(args.seed, args.stream))?;
    with_csv_out(args.out.as_deref(), |wr| {
        batch.to_csv_writer(wr)?;
        Ok(())
    })
}

fn transform_cmd(args: TransformArgs) -> Result<()> {
    let batch = load_batch(&args.input)?;
    let dim = batch.n_cols();
    let specs = match (&args.transform, &args.selector) {
        (Some(names), None) => {
            if names.starts_with("mixed:") {
                let selector = parse_selector(names)?;
                selector.resolve(dim, &mut RngStream::new(args.seed, args.stream).rng())?
            } else {
                parse_transform_list(names, dim)?
            }
        }
        (None, Some(path)) => {
            let selector: TransformSelector = read_json(path)?;
            selector.resolve(dim, &mut RngStream::new(args.seed, args.stream).rng())?
        }
        (None, None) => bail!("one of --transform or --selector is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let transformed = apply_transforms(&batch, &specs)?;
    with_csv_out(args.out.as_deref(), |wr| {
        transformed.to_csv_writer(wr)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct ExactCovOutput {
    transforms: Vec<String>,
    sigma_pi: gnpn::SymmetricMatrix,
    /// Entries where the series was inapplicable and quadrature filled in.
    oracle_entries: Vec<(usize, usize)>,
    /// Absent when the kappa/lambda series does not converge for the
    /// given transforms; the exact covariance above is still valid.
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<gnpn::GnpnPrediction>,
}

fn exact_cov_cmd(args: ExactCovArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let specs = parse_transform_list(&args.transform, model.dim())?;
    let cfg = SeriesConfig::default();
    let exact = exact_sigma_pi(&model, &specs, &cfg)?;
    let prediction = match predict(&model, &specs, &cfg) {
        Ok(p) => Some(p),
        Err(err @ (Error::SeriesDivergence { .. } | Error::NoDerivativeSequence(_))) => {
            eprintln!(
                "warning: first-order prediction skipped, kappa/lambda series \
                 unavailable for these transforms ({err})"
            );
            None
        }
        Err(err) => return Err(err.into()),
    };
    let output = ExactCovOutput {
        transforms: specs.iter().map(|s| s.id().to_string()).collect(),
        sigma_pi: exact.matrix,
        oracle_entries: exact.oracle_entries,
        prediction,
    };
    write_json(&output, args.out.as_deref())
}

fn write_triangle_csv(result: &LearnResult, path: &Path) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut wr = csv::Writer::from_writer(BufWriter::new(file));
    wr.write_record(["rank", "i", "j", "value"])?;
    for (rank, (value, (i, j))) in result
        .gamma_triangle
        .values
        .iter()
        .zip(result.gamma_triangle.pair_index.iter())
        .enumerate()
    {
        wr.write_record([
            rank.to_string(),
            i.to_string(),
            j.to_string(),
            value.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn learn_cmd(args: LearnArgs) -> Result<()> {
    let batch = load_batch(&args.input)?;
    let opts = LearnOpts {
        strict: !args.permissive,
        threshold_override: args.threshold,
    };
    let result = match learn(&batch, &opts) {
        Ok(r) => r,
        Err(Error::NoKnee) => {
            bail!(
                "no knee found in the sorted precision magnitudes; \
                 rerun with an explicit --threshold to cut manually"
            );
        }
        Err(Error::ApplicabilityFailed { norm }) => {
            bail!(
                "applicability check failed: ‖R̂ − I‖ = {norm:.4} >= 1; \
                 rerun with --permissive to continue anyway"
            );
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &args.triangle_out {
        write_triangle_csv(&result, path)?;
    }
    write_json(&result, args.out.as_deref())
}

fn parse_grid(input: &str, what: &str) -> Result<Vec<usize>> {
    input
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad {what} entry {s:?}"))
        })
        .collect()
}

fn parse_mode(name: &str) -> Result<ExperimentMode> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .with_context(|| format!("unknown experiment mode {name:?}"))
}

fn experiment_cmd(args: ExperimentArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => {
            let mode = args
                .mode
                .as_deref()
                .context("--mode is required without --config")?;
            ExperimentConfig {
                mode: parse_mode(mode)?,
                dim: 10,
                n_samples: 50_000,
                n_trials: 0,
                transform: TransformSelector::named("cube"),
                seed: 0,
                enforce_b_norm: true,
                gw_lambda: 2.0,
                dims: None,
                n_grid: None,
                applicability_retry_cap: 1000,
                weight_scale_is_variance: false,
                out: None,
            }
        }
    };
    if let Some(mode) = &args.mode {
        cfg.mode = parse_mode(mode)?;
    }
    if let Some(dim) = args.dim {
        cfg.dim = dim;
    }
    if let Some(n) = args.n_samples {
        cfg.n_samples = n;
    }
    if let Some(t) = &args.transform {
        cfg.transform = parse_selector(t)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.allow_large_b {
        cfg.enforce_b_norm = false;
    }
    if let Some(lambda) = args.lambda {
        cfg.gw_lambda = lambda;
    }
    if let Some(dims) = &args.dims {
        cfg.dims = Some(parse_grid(dims, "--dims")?);
    }
    if let Some(grid) = &args.n_grid {
        cfg.n_grid = Some(parse_grid(grid, "--n-grid")?);
    }
    if let Some(n) = args.n_trials {
        cfg.n_trials = n;
    } else if cfg.n_trials == 0 {
        let profile = args.profile.unwrap_or(Profile::Desk);
        cfg.n_trials = match (profile, cfg.mode) {
            (Profile::Desk, ExperimentMode::ApplicabilityStudy) => 500,
            (Profile::Desk, _) => 200,
            (Profile::Full, _) => 1000,
        };
    } else if let Some(profile) = args.profile {
        cfg.n_trials = match (profile, cfg.mode) {
            (Profile::Desk, ExperimentMode::ApplicabilityStudy) => 500,
            (Profile::Desk, _) => 200,
            (Profile::Full, _) => 1000,
        };
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.display().to_string());
    }

    let report = run_experiment(&cfg)?;
    if let Some(path) = &args.csv {
        let file =
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_report_csv(&report, BufWriter::new(file))?;
    }
    let out = cfg.out.as_ref().map(PathBuf::from);
    write_json(&report, out.as_deref())
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let truth = load_graph(&args.truth)?;
    let learned = load_graph(&args.learned)?;
    let metrics = score(&truth, &learned)?;
    write_json(&metrics, args.out.as_deref())
}
