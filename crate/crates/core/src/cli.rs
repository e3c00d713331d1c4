//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `--config` file of `key = value` lines, then explicit flags.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::harness::{
    self, Curve, EpochMetrics, ExperimentConfig, OptimizerKind, SuiteReport, Timing, XAxis,
};
use crate::model::{self, Dataset, RngSeed};

#[derive(Debug, Parser)]
#[command(
    name = "hybrid-cd",
    version,
    about = "Hybrid Jacobi coordinate descent vs. gradient descent on two-layer ReLU networks",
    long_about = "Hybrid Jacobi coordinate descent vs. gradient descent on two-layer ReLU networks.\n\n\
                  Every run is seeded (default seed 42), so a bare invocation is reproducible."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (unit-sphere features, Gaussian labels)
    GenData(GenDataArgs),
    /// Train one network and write its metrics CSV and loss plots
    Train(TrainArgs),
    /// Run GD and hybrid for each m in a list, on shared data and seed
    Compare(CompareArgs),
    /// Run hybrid for each dw in a list, on shared data and seed
    SweepDw(SweepArgs),
    /// Plot ln(loss) curves from metrics CSV files
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of samples
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 1000)]
    pub p: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingArg {
    /// Monotonic wall clock around optimizer calls
    Wall,
    /// One unit per epoch (reproducible output files)
    Epochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Epoch,
    Time,
}

/// Flags shared by `train`, `compare` and `sweep-dw`.
#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// `key = value` config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of samples [default: 10]
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension [default: 1000]
    #[arg(long)]
    pub p: Option<usize>,
    /// Hidden neurons [default: 100]
    #[arg(long)]
    pub m: Option<usize>,
    /// Gradient threshold and line-search step [default: 0.5]
    #[arg(long)]
    pub dw: Option<f64>,
    /// Jacobi blend coefficient [default: 1/(m*p)]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gradient-descent learning rate [default: 1/n]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// RNG seed for data and initialization [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compute coordinate targets on all cores [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    /// Cap on loss evaluations per line search [default: 10000]
    #[arg(long)]
    pub max_probes: Option<usize>,
    /// How elapsed_s is measured [default: epochs for train, wall otherwise]
    #[arg(long, value_enum)]
    pub timing: Option<TimingArg>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Train on a saved dataset instead of generating one from the seed
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Optimizer [default: hybrid]
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Hidden-layer widths to compare
    #[arg(long, num_args = 1.., default_values_t = [100, 500, 1000])]
    pub m_list: Vec<usize>,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Threshold values to sweep
    #[arg(long, num_args = 1.., default_values_t = [0.1, 0.5, 1.0])]
    pub dw_list: Vec<f64>,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metrics CSV files, one curve each
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = AxisArg::Epoch)]
    pub x: AxisArg,
    /// Output SVG file
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed invocation, mapped to the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad values, unreadable input files. Exit status 2.
    #[error("{0}")]
    Usage(String),
    /// Training diverged or output could not be written. Exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses one `key = value` line into `config`.
fn apply_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
    }
    match key {
        "optimizer" => config.optimizer = value.parse().map_err(|e: Error| e.to_string())?,
        "n" => config.n = num(key, value)?,
        "p" => config.p = num(key, value)?,
        "m" => config.m = num(key, value)?,
        "dw" => config.dw = num(key, value)?,
        "alpha" => config.alpha = Some(num(key, value)?),
        "lr" => config.lr = Some(num(key, value)?),
        "epochs" => config.epochs = num(key, value)?,
        "seed" => config.seed = RngSeed(num(key, value)?),
        "parallel" => config.parallel = num(key, value)?,
        "max_probes" => config.max_probes = num(key, value)?,
        "timing" => config.timing = value.parse().map_err(|e: Error| e.to_string())?,
        "output_dir" => config.output_dir = PathBuf::from(value),
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

/// Applies a config file's text on top of `base` and validates the result.
pub fn parse_config(
    text: &str,
    path: &Path,
    base: ExperimentConfig,
) -> Result<ExperimentConfig, Error> {
    let mut config = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
        apply_key(&mut config, key.trim(), value.trim()).map_err(parse_err)?;
    }
    config.validate()?;
    Ok(config)
}

/// Reads a config file on top of the built-in defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text, path, ExperimentConfig::default())
}

/// Defaults, then the config file, then flags. Returns the dataset when
/// `--data` was given.
fn resolve(
    shared: &SharedArgs,
    mut base: ExperimentConfig,
) -> Result<(ExperimentConfig, Option<Dataset>), CliError> {
    if let Some(path) = &shared.config {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        base = parse_config(&text, path, base).map_err(usage)?;
    }
    let mut c = base;
    let data = match &shared.data {
        Some(path) => {
            let data = Dataset::load(path).map_err(usage)?;
            for (flag, given, actual) in [("n", shared.n, data.n()), ("p", shared.p, data.p())] {
                if given.is_some_and(|g| g != actual) {
                    return Err(usage(format!(
                        "--{flag} {} conflicts with {} in {}",
                        given.unwrap(),
                        actual,
                        path.display()
                    )));
                }
            }
            c.n = data.n();
            c.p = data.p();
            Some(data)
        }
        None => None,
    };
    if let Some(v) = shared.n {
        c.n = v;
    }
    if let Some(v) = shared.p {
        c.p = v;
    }
    if let Some(v) = shared.m {
        c.m = v;
    }
    if let Some(v) = shared.dw {
        c.dw = v;
    }
    if shared.alpha.is_some() {
        c.alpha = shared.alpha;
    }
    if shared.lr.is_some() {
        c.lr = shared.lr;
    }
    if let Some(v) = shared.epochs {
        c.epochs = v;
    }
    if let Some(v) = shared.seed {
        c.seed = RngSeed(v);
    }
    if let Some(v) = shared.parallel {
        c.parallel = v;
    }
    if let Some(v) = shared.max_probes {
        c.max_probes = v;
    }
    if let Some(t) = shared.timing {
        c.timing = match t {
            TimingArg::Wall => Timing::Wall,
            TimingArg::Epochs => Timing::Epochs,
        };
    }
    if let Some(dir) = &shared.out_dir {
        c.output_dir = dir.clone();
    }
    c.validate().map_err(usage)?;
    Ok((c, data))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn train(args: &TrainArgs) -> Result<String, CliError> {
    let base = ExperimentConfig {
        timing: Timing::Epochs,
        ..ExperimentConfig::default()
    };
    let (mut config, data) = resolve(&args.shared, base)?;
    if let Some(opt) = args.optimizer {
        config.optimizer = match opt {
            OptimizerArg::Gd => OptimizerKind::Gd,
            OptimizerArg::Hybrid => OptimizerKind::Hybrid,
        };
    }
    let data = match data {
        Some(d) => d,
        None => model::generate_dataset(config.n, config.p, config.seed).map_err(usage)?,
    };
    create_dir(&config.output_dir)?;

    let (metrics, failure) = match harness::run_on(&config, &data) {
        Ok(r) => (r.metrics, None),
        Err(f) => (f.metrics, Some(f.error)),
    };
    let csv = config.output_dir.join(config.csv_name());
    let mut written = Vec::new();
    if !metrics.is_empty() {
        harness::emit_csv(&metrics, &csv).map_err(runtime)?;
        written.push(csv);
        let label = config.optimizer.to_string();
        let curves = [Curve {
            label: &label,
            metrics: &metrics,
        }];
        for axis in [XAxis::Epoch, XAxis::ElapsedSeconds] {
            let path = config.output_dir.join(format!(
                "train_{}_{}.svg",
                config.optimizer,
                axis.file_tag()
            ));
            harness::emit_plot(&curves, axis, &path).map_err(runtime)?;
            written.push(path);
        }
    }
    if let Some(e) = failure {
        return Err(runtime(e));
    }
    let last = metrics.last().expect("epochs >= 1");
    Ok(format!(
        "{} m={} dw={} epochs={} final loss {:.6e}; wrote {}",
        config.optimizer,
        config.m,
        config.dw,
        last.epoch,
        last.loss,
        list(&written)
    ))
}

fn list(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn summarize(report: &SuiteReport) -> Result<String, CliError> {
    let failures: Vec<String> = report
        .failures()
        .map(|r| match &r.outcome {
            Err(f) => format!("{}: {f}", r.label),
            Ok(_) => unreachable!(),
        })
        .collect();
    if !failures.is_empty() {
        return Err(runtime(failures.join("; ")));
    }
    let mut paths = report.csv_paths.clone();
    paths.extend(report.svg_paths.iter().cloned());
    Ok(format!(
        "{} runs; wrote {}",
        report.runs.len(),
        list(&paths)
    ))
}

fn compare(args: &CompareArgs) -> Result<String, CliError> {
    let (config, data) = resolve(&args.shared, ExperimentConfig::default())?;
    for &m in &args.m_list {
        if m == 0 {
            return Err(usage("m values must be >= 1"));
        }
    }
    create_dir(&config.output_dir)?;
    let report = harness::compare_suite(&config, &args.m_list, data.as_ref()).map_err(runtime)?;
    summarize(&report)
}

fn sweep(args: &SweepArgs) -> Result<String, CliError> {
    let (config, data) = resolve(&args.shared, ExperimentConfig::default())?;
    if let Some(bad) = args
        .dw_list
        .iter()
        .find(|&&dw| !(dw > 0.0 && dw.is_finite()))
    {
        return Err(usage(format!("dw values must be > 0, got {bad}")));
    }
    create_dir(&config.output_dir)?;
    let report = harness::sweep_dw(&config, &args.dw_list, data.as_ref()).map_err(runtime)?;
    summarize(&report)
}

fn plot(args: &PlotArgs) -> Result<String, CliError> {
    let loaded: Vec<(String, Vec<EpochMetrics>)> = args
        .inputs
        .iter()
        .map(|path| {
            let metrics = harness::load_csv(path).map_err(usage)?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            Ok((label, metrics))
        })
        .collect::<Result<_, CliError>>()?;
    let curves: Vec<Curve<'_>> = loaded
        .iter()
        .map(|(label, metrics)| Curve { label, metrics })
        .collect();
    let axis = match args.x {
        AxisArg::Epoch => XAxis::Epoch,
        AxisArg::Time => XAxis::ElapsedSeconds,
    };
    let svg = harness::render_plot(&curves, axis).map_err(usage)?;
    fs::write(&args.out, svg).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    Ok(format!("wrote {}", args.out.display()))
}

fn gen_data(args: &GenDataArgs) -> Result<String, CliError> {
    let data = model::generate_dataset(args.n, args.p, RngSeed(args.seed)).map_err(usage)?;
    data.save(&args.out).map_err(runtime)?;
    Ok(format!(
        "wrote {} ({} x {})",
        args.out.display(),
        args.n,
        args.p
    ))
}

/// Runs a parsed command and returns its one-line summary.
pub fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::SweepDw(a) => sweep(a),
        Command::Plot(a) => plot(a),
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn execute<I, T>(argv: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let text = e.to_string();
        let first = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("invalid arguments");
        CliError::Usage(first.trim_start_matches("error: ").to_string())
    })?;
    dispatch(&cli)
}

/// Entry point for the binary: prints the outcome and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    // help and version go through clap's own printer
    if let Err(e) = Cli::try_parse_from(&argv) {
        use clap::error::ErrorKind;
        if matches!(
            e.kind(),
            ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        ) {
            let _ = e.print();
            return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                2
            } else {
                0
            };
        }
    }
    match execute(argv) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("hybrid-cd: {e}");
            e.exit_code()
        }
    }
}

/// The clap command tree, for help-text checks.
pub fn command() -> clap::Command {
    Cli::command()
}
