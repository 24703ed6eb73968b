use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing::info;

use super::campaign::{default_radii, run_campaign, CampaignConfig, CampaignMode};
use super::dataset::LabeledDataset;
use super::report::{emit_report, metrics_from_rows, read_results_csv, ReportSummary};
use super::train::{run_train_demo, DemoConfig};
use crate::classifiers::{ClassifierHandle, ClassifierSpec, Point};
use crate::error::Error;
use crate::memory::{MemoryStore, ScanStrategy};
use crate::numeric::{Probability, P_CLAMP};
use crate::sigma_opt::{optimize_sigma, GradMode, ReturnMode, SigmaOptConfig};
use crate::smoothing::{GaussianCertConfig, NoiseKind};

pub const SEED_ENV: &str = "CERTSMOOTH_SEED";

#[derive(Debug, Parser)]
#[command(name = "certsmooth", version, about = "Certify smoothed classifiers with per-input noise scales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify every row of a dataset and write a results CSV plus summary JSON.
    Certify(CertifyArgs),
    /// Run the scale optimizer on one input and print its trace as JSON.
    OptimizeSigma(OptimizeArgs),
    /// Train on synthetic data with fixed and per-input scales and compare.
    TrainDemo(DemoArgs),
    /// Recompute metrics from a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Ds,
    DsL1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GradArg {
    /// Analytic when the classifier has input derivatives, otherwise finite differences.
    Auto,
    Analytic,
    Fd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReturnArg {
    Faithful,
    Best,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScanArg {
    Linear,
    Indexed,
}

#[derive(Debug, Args)]
struct OptArgs {
    /// Initial smoothing scale; also the fixed scale in `--mode fixed`.
    #[arg(long)]
    sigma0: f64,
    /// Ascent step size.
    #[arg(long, default_value_t = 1e-4)]
    alpha_step: f64,
    /// Number of ascent iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Noise draws shared by all iterations.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 1e-3)]
    sigma_min: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma_max: f64,
    #[arg(long, value_enum, default_value_t = GradArg::Auto)]
    grad_mode: GradArg,
    #[arg(long, value_enum, default_value_t = ReturnArg::Faithful)]
    return_mode: ReturnArg,
    /// Half-width of the finite difference in sigma.
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
    #[arg(long, default_value_t = P_CLAMP)]
    p_clamp: f64,
    /// Defaults to $CERTSMOOTH_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Ds)]
    mode: ModeArg,
    #[command(flatten)]
    opt: OptArgs,
    /// Samples used to pick the candidate class.
    #[arg(long, default_value_t = 100)]
    n0: u64,
    /// Samples used to bound the candidate's probability.
    #[arg(long, default_value_t = 100_000)]
    n_cert: u64,
    #[arg(long, default_value_t = 0.001)]
    alpha_fail: f64,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start from an existing memory file instead of an empty store.
    #[arg(long)]
    memory_in: Option<PathBuf>,
    /// Write the final memory here.
    #[arg(long)]
    memory_out: Option<PathBuf>,
    /// Comma-separated radii for the certified-accuracy curve.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ScanArg::Linear)]
    scan: ScanArg,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    classifier: PathBuf,
    /// Comma-separated coordinates of the input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Vec<f64>,
    /// Optimize the uniform half-width for ℓ1 certificates instead.
    #[arg(long)]
    l1: bool,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// Defaults to $CERTSMOOTH_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 10_000)]
    n_cert: u64,
    /// Write the comparison JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn opt_config(args: &OptArgs, c: &ClassifierHandle, noise: NoiseKind) -> CliResult<SigmaOptConfig> {
    let grad_mode = match args.grad_mode {
        GradArg::Analytic => GradMode::Analytic,
        GradArg::Fd => GradMode::ScalarFd,
        GradArg::Auto if c.provides_derivatives() => GradMode::Analytic,
        GradArg::Auto => GradMode::ScalarFd,
    };
    let cfg = SigmaOptConfig {
        sigma0: args.sigma0,
        step_alpha: args.alpha_step,
        iters_k: args.iters,
        n_samples: args.n,
        sigma_min: args.sigma_min,
        sigma_max: args.sigma_max,
        grad_mode,
        return_mode: match args.return_mode {
            ReturnArg::Faithful => ReturnMode::Faithful,
            ReturnArg::Best => ReturnMode::BestIterate,
        },
        fd_step: args.fd_step,
        noise,
        p_clamp: args.p_clamp,
        seed: resolve_seed(args.seed)?,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Prints one line to stdout. A reader that hung up early (`| head`) is not
/// an error.
fn emit(text: &str) -> CliResult {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

fn certify(args: CertifyArgs) -> CliResult {
    let c = ClassifierSpec::load(&args.classifier)?.build()?;
    let data = LabeledDataset::load(&args.dataset)?;
    let (mode, noise) = match args.mode {
        ModeArg::Fixed => (CampaignMode::FixedSigma, NoiseKind::Gaussian),
        ModeArg::Ds => (CampaignMode::Ds, NoiseKind::Gaussian),
        ModeArg::DsL1 => (CampaignMode::DsL1, NoiseKind::Uniform),
    };
    let opt = opt_config(&args.opt, &c, noise)?;
    let alpha_fail = Probability::new(args.alpha_fail).map_err(|e| Failure::Usage(e.to_string()))?;
    let cert = GaussianCertConfig {
        sigma: args.opt.sigma0,
        n0: args.n0,
        n_cert: args.n_cert,
        alpha_fail,
        seed: opt.seed,
        p_clamp: args.opt.p_clamp,
    };
    let scan = match args.scan {
        ScanArg::Linear => ScanStrategy::Linear,
        ScanArg::Indexed => ScanStrategy::Indexed,
    };
    let cfg = CampaignConfig {
        mode,
        cert,
        opt,
        radii: args.radii.unwrap_or_else(default_radii),
        scan,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let memory = args
        .memory_in
        .as_ref()
        .map(|p| MemoryStore::load(p, scan))
        .transpose()?;
    let out = run_campaign(&c, &data, &cfg, memory)?;
    let summary = ReportSummary {
        metrics: out.metrics,
        memory: out.audit,
        config: cfg,
    };
    let json_path = emit_report(&out.results, &summary, &args.out)?;
    if let Some(path) = &args.memory_out {
        out.memory.save(path)?;
    }
    info!(csv = %args.out.display(), json = %json_path.display(), "report written");
    emit(&format!("acr {}", summary.metrics.acr))
}

fn optimize(args: OptimizeArgs) -> CliResult {
    let c = ClassifierSpec::load(&args.classifier)?.build()?;
    let x = Point::new(args.point).map_err(|e| Failure::Usage(format!("--point: {e}")))?;
    let noise = if args.l1 { NoiseKind::Uniform } else { NoiseKind::Gaussian };
    let cfg = opt_config(&args.opt, &c, noise)?;
    let out = optimize_sigma(&c, &x, &cfg)?;
    let doc = json!({
        "sigma_star": out.sigma_star,
        "class_flips": out.trace.class_flips,
        "trace": out.trace.entries,
    });
    emit(&serde_json::to_string_pretty(&doc).map_err(Error::from)?)
}

fn demo(args: DemoArgs) -> CliResult {
    let mut cfg = DemoConfig::with_seed(resolve_seed(args.seed)?);
    cfg.epochs = args.epochs;
    cfg.warmup_epochs = cfg.warmup_epochs.min(args.epochs);
    cfg.cert.n_cert = args.n_cert.max(cfg.cert.n0);
    let report = run_train_demo(&cfg)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(path) = &args.out {
        std::fs::write(path, &text).map_err(Error::from)?;
    }
    emit(&text)
}

fn report(args: ReportArgs) -> CliResult {
    let rows = read_results_csv(&args.input)?;
    let radii = args.radii.unwrap_or_else(default_radii);
    let metrics = metrics_from_rows(&rows, &radii).map_err(|e| match e {
        Error::InvalidConfig(m) => Failure::Usage(m),
        other => Failure::Runtime(other),
    })?;
    emit(&serde_json::to_string_pretty(&metrics).map_err(Error::from)?)
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 on usage errors and 1 on runtime failures.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Certify(a) => certify(a),
        Command::OptimizeSigma(a) => optimize(a),
        Command::TrainDemo(a) => demo(a),
        Command::Report(a) => report(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
