//! `qubits` command-line interface.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for usage and
//! I/O errors. Errors are written to stderr as `{"error": {...}}`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qubits::dataset::{self, Roi, StandardizeMode};
use qubits::pipeline::{
    self, InputConfig, InputFormat, LambdaMode, PreprocessConfig, RunConfig, SolverKind,
};
use qubits::qubo::LambdaRegime;
use qubits::report::{self, ClusterReport};
use qubits::similarity::SimilarityKind;
use qubits::synth::{self, SynthSpec};
use qubits::Error;

#[derive(Parser)]
#[command(
    name = "qubits",
    version,
    about = "Balanced QUBO clustering of time series and image stacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster by minimizing the balanced QUBO objective.
    Cluster(ClusterArgs),
    /// Cluster with k-means++ for comparison.
    Baseline(BaselineArgs),
    /// Generate a synthetic periodic frame stack.
    Synth(SynthArgs),
    /// Embed the cosine geometry of a dataset in two dimensions.
    Mds(MdsArgs),
    /// Compare two reports over the same dataset.
    Eval(EvalArgs),
    /// Write the QUBO a `cluster` run would solve.
    QuboExport(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Cosine,
    InvEuclid,
}

impl From<Metric> for SimilarityKind {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Cosine => SimilarityKind::Cosine,
            Metric::InvEuclid => SimilarityKind::InverseEuclidean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Strict,
    OutlierPermitting,
}

impl From<Regime> for LambdaRegime {
    fn from(r: Regime) -> Self {
        match r {
            Regime::Strict => LambdaRegime::Strict,
            Regime::OutlierPermitting => LambdaRegime::OutlierPermitting,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Anneal,
    BruteForce,
}

#[derive(Clone, Copy, ValueEnum)]
enum Standardize {
    Row,
    Global,
    None,
}

impl From<Standardize> for StandardizeMode {
    fn from(s: Standardize) -> Self {
        match s {
            Standardize::Row => StandardizeMode::Row,
            Standardize::Global => StandardizeMode::Global,
            Standardize::None => StandardizeMode::None,
        }
    }
}

/// Input and preprocessing shared by every data-consuming subcommand.
#[derive(Args)]
struct DataArgs {
    /// CSV (one series per row) or FSK1 frame stack (`.fsk`, `.fsk1`).
    input: PathBuf,
    #[arg(long, value_enum, default_value = "inv-euclid")]
    metric: Metric,
    /// First CSV column holds integer class labels.
    #[arg(long)]
    labels: bool,
    /// Skip the first CSV line.
    #[arg(long)]
    header: bool,
    /// Crop frames to the half-open pixel rectangle `x0,y0,x1,y1`.
    #[arg(long)]
    roi: Option<Roi>,
    /// Defaults to `row` for inv-euclid and `none` for cosine.
    #[arg(long, value_enum)]
    standardize: Option<Standardize>,
    /// Keep row means before the cosine path's denoising.
    #[arg(long)]
    no_center: bool,
    /// Truncation rank for SVD denoising; 0 disables. Defaults to 5 for cosine.
    #[arg(long)]
    svd_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "strict")]
    lambda_regime: Regime,
    /// One-hot penalty weight; overrides the regime together with --lambda2.
    #[arg(long, requires = "lambda2")]
    lambda1: Option<f64>,
    /// Balance penalty weight.
    #[arg(long, requires = "lambda1")]
    lambda2: Option<f64>,
    #[arg(long, value_enum, default_value = "anneal")]
    solver: Solver,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    t_initial: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Report the annealed bits without the local-search refinement.
    #[arg(long)]
    no_polish: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = qubits::baselines::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    n_init: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct OutputArgs {
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Include MDS coordinates (on by default for cosine).
    #[arg(long)]
    mds: bool,
    #[arg(long)]
    dump_spectrum: Option<PathBuf>,
    #[arg(long)]
    dump_similarity: Option<PathBuf>,
    #[arg(long)]
    dump_mds: Option<PathBuf>,
    #[arg(long)]
    dump_means: Option<PathBuf>,
    #[arg(long)]
    dump_means_fsk: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// `.fsk`/`.fsk1` for a frame stack, anything else for CSV.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write the true phase of each frame, one per line.
    #[arg(long)]
    phases: Option<PathBuf>,
    #[arg(long, default_value_t = SynthSpec::default().n_frames)]
    frames: usize,
    #[arg(long, default_value_t = SynthSpec::default().height)]
    height: usize,
    #[arg(long, default_value_t = SynthSpec::default().width)]
    width: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_periods)]
    periods: f64,
    #[arg(long, default_value_t = SynthSpec::default().amplitude)]
    amplitude: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise_sigma)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MdsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// CSV of `index,x,y`; JSON to stdout when omitted.
    #[arg(long)]
    dump_mds: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    report_a: PathBuf,
    report_b: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "strict")]
    lambda_regime: Regime,
    #[arg(long, requires = "lambda2")]
    lambda1: Option<f64>,
    #[arg(long, requires = "lambda1")]
    lambda2: Option<f64>,
    /// Model path; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    dump_similarity: Option<PathBuf>,
}

fn base_config(subcommand: &str, data: &DataArgs, k: usize) -> RunConfig {
    let metric = SimilarityKind::from(data.metric);
    let mut input = InputConfig::new(&data.input);
    input.labels = data.labels;
    input.header = data.header;
    input.roi = data.roi;
    let mut preprocess = PreprocessConfig::for_metric(metric);
    if let Some(s) = data.standardize {
        preprocess.standardize = s.into();
    }
    if data.no_center {
        preprocess.center = false;
    }
    if let Some(r) = data.svd_rank {
        preprocess.svd_rank = r;
    }
    let mut cfg = RunConfig::new(input, metric, k);
    cfg.subcommand = subcommand.into();
    cfg.preprocess = preprocess;
    cfg.seed = data.seed;
    cfg
}

fn lambda_mode(regime: Regime, l1: Option<f64>, l2: Option<f64>) -> LambdaMode {
    match (l1, l2) {
        (Some(lambda1), Some(lambda2)) => LambdaMode::Explicit { lambda1, lambda2 },
        _ => LambdaMode::Auto {
            regime: regime.into(),
        },
    }
}

fn apply_outputs(cfg: &mut RunConfig, out: &OutputArgs) {
    cfg.mds |= out.mds;
    let o = &mut cfg.outputs;
    o.report = out.output.clone();
    o.dump_spectrum = out.dump_spectrum.clone();
    o.dump_similarity = out.dump_similarity.clone();
    o.dump_mds = out.dump_mds.clone();
    o.dump_means = out.dump_means.clone();
    o.dump_means_fsk = out.dump_means_fsk.clone();
    if o.dump_mds.is_some() {
        cfg.mds = true;
    }
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_out(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}").and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::warn!("writing to stdout failed: {e}");
        }
    }
}

fn emit_report(report: &ClusterReport) {
    if report.config.outputs.report.is_none() {
        print_out(&report.to_json());
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print_out(text);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Cluster(a) => {
            let mut cfg = base_config("cluster", &a.data, a.k);
            cfg.lambda = lambda_mode(a.lambda_regime, a.lambda1, a.lambda2);
            cfg.solver.kind = match a.solver {
                Solver::Anneal => SolverKind::Anneal,
                Solver::BruteForce => SolverKind::BruteForce,
            };
            cfg.solver.sweeps = a.sweeps;
            cfg.solver.restarts = a.restarts;
            cfg.solver.t_initial = a.t_initial;
            cfg.solver.t_final = a.t_final;
            cfg.solver.polish = !a.no_polish;
            apply_outputs(&mut cfg, &a.out);
            emit_report(&pipeline::run_cluster(&cfg)?);
        }
        Command::Baseline(a) => {
            let mut cfg = base_config("baseline", &a.data, a.k);
            cfg.kmeans.max_iter = a.max_iter;
            cfg.kmeans.n_init = a.n_init;
            apply_outputs(&mut cfg, &a.out);
            emit_report(&pipeline::run_baseline(&cfg)?);
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                n_frames: a.frames,
                height: a.height,
                width: a.width,
                n_periods: a.periods,
                amplitude: a.amplitude,
                noise_sigma: a.noise,
                seed: a.seed,
            };
            let out = synth::generate(&spec)?;
            match InputFormat::from_path(&a.output) {
                InputFormat::Fsk1 => dataset::write_frames(&a.output, &out.dataset)?,
                InputFormat::Csv => dataset::write_csv(&a.output, &out.dataset)?,
            }
            if let Some(path) = &a.phases {
                let text: String = out.phases.iter().map(|p| format!("{p}\n")).collect();
                write_or_print(Some(path), &text)?;
            }
            let summary = json!({
                "spec": spec,
                "output": a.output,
                "digest": out.dataset.digest(),
            });
            print_out(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Mds(a) => {
            let mut cfg = base_config("mds", &a.data, 1);
            cfg.outputs.dump_mds = a.dump_mds.clone();
            let coords = pipeline::run_mds(&cfg)?;
            if a.dump_mds.is_none() {
                print_out(&serde_json::to_string(&coords).expect("coordinates serialize"));
            }
        }
        Command::Eval(a) => {
            let ra = ClusterReport::load(&a.report_a)?;
            let rb = ClusterReport::load(&a.report_b)?;
            let cmp = report::run_eval(&ra, &rb)?;
            let text = serde_json::to_string_pretty(&cmp).expect("comparison serializes");
            write_or_print(a.output.as_deref(), &text)?;
        }
        Command::QuboExport(a) => {
            let mut cfg = base_config("qubo-export", &a.data, a.k);
            cfg.lambda = lambda_mode(a.lambda_regime, a.lambda1, a.lambda2);
            cfg.outputs.report = a.output.clone();
            cfg.outputs.dump_similarity = a.dump_similarity.clone();
            let model = pipeline::export_qubo(&cfg)?;
            if a.output.is_none() {
                print_out(&model.to_json());
            }
        }
    }
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
    match e {
        Error::Io { path, .. } => body["path"] = json!(path),
        Error::Format { row, .. } => body["row"] = json!(row),
        Error::Parse { row, col, .. } => {
            body["row"] = json!(row);
            body["col"] = json!(col);
        }
        _ => {}
    }
    json!({ "error": body })
}

fn configure_threads() {
    let Ok(value) = std::env::var("QUBITS_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring QUBITS_THREADS={value:?}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
