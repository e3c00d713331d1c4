//! Experiment runner, per-epoch metrics, CSV output and SVG convergence plots.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkParams, RngSeed};
use crate::optimizers::{self, EpochStats, GdConfig, HybridConfig, DEFAULT_MAX_PROBES};

pub const CSV_HEADER: &str =
    "epoch,loss,ln_loss,elapsed_s,grad_updates,ls_updates,nochange_updates,ls_probes,cache_bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Gd,
    Hybrid,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Hybrid => "hybrid",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(OptimizerKind::Gd),
            "hybrid" => Ok(OptimizerKind::Hybrid),
            other => Err(Error::invalid(format!(
                "unknown optimizer `{other}` (expected gd or hybrid)"
            ))),
        }
    }
}

/// How `elapsed_s` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Timing {
    /// Monotonic wall clock around the optimizer calls only.
    Wall,
    /// One unit per completed epoch. Makes every output file reproducible.
    Epochs,
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timing::Wall => "wall",
            Timing::Epochs => "epochs",
        })
    }
}

impl FromStr for Timing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" => Ok(Timing::Wall),
            "epochs" => Ok(Timing::Epochs),
            other => Err(Error::invalid(format!(
                "unknown timing `{other}` (expected wall or epochs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub optimizer: OptimizerKind,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub dw: f64,
    /// Jacobi blend; `None` means `1/(m·p)`.
    pub alpha: Option<f64>,
    /// Gradient-descent step; `None` means `1/n`.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub seed: RngSeed,
    pub parallel: bool,
    pub max_probes: usize,
    pub timing: Timing,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Hybrid,
            n: 10,
            p: 1000,
            m: 100,
            dw: 0.5,
            alpha: None,
            lr: None,
            epochs: 100,
            seed: RngSeed(42),
            parallel: true,
            max_probes: DEFAULT_MAX_PROBES,
            timing: Timing::Wall,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| optimizers::default_alpha(self.m, self.p))
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(1.0 / self.n as f64)
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        HybridConfig {
            dw: self.dw,
            alpha: self.alpha(),
            max_probes: self.max_probes,
            parallel: self.parallel,
        }
    }

    pub fn gd_config(&self) -> GdConfig {
        GdConfig { lr: self.lr() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("p", self.p),
            ("m", self.m),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        self.hybrid_config().validate()?;
        self.gd_config().validate()
    }

    /// `{optimizer}_m{m}_dw{dw}_seed{seed}.csv`
    pub fn csv_name(&self) -> String {
        format!(
            "{}_m{}_dw{}_seed{}.csv",
            self.optimizer, self.m, self.dw, self.seed.0
        )
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based; row `k` describes the state after `k` updates.
    pub epoch: usize,
    pub loss: f64,
    /// `ln(loss)`; `-inf` for an exactly zero loss.
    pub ln_loss: f64,
    /// Cumulative training time at the end of this epoch.
    pub elapsed_s: f64,
    pub grad_updates: usize,
    pub ls_updates: usize,
    pub nochange_updates: usize,
    pub ls_probes: usize,
    pub cache_bytes: usize,
}

impl EpochMetrics {
    fn from_stats(epoch: usize, elapsed_s: f64, stats: &EpochStats) -> Self {
        Self {
            epoch,
            loss: stats.loss,
            ln_loss: stats.loss.ln(),
            elapsed_s,
            grad_updates: stats.grad_updates,
            ls_updates: stats.ls_updates,
            nochange_updates: stats.nochange_updates,
            ls_probes: stats.ls_probes,
            cache_bytes: stats.cache_bytes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Loss of the initial parameters, before any update.
    pub initial_loss: f64,
    pub metrics: Vec<EpochMetrics>,
    pub final_params: NetworkParams,
}

/// A run that diverged, with the metrics of every epoch that completed.
#[derive(Debug)]
pub struct RunFailure {
    pub metrics: Vec<EpochMetrics>,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} epochs completed)",
            self.error,
            self.metrics.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            metrics: Vec::new(),
            error,
        }
    }
}

/// Generates data and parameters from the seed and trains.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, RunFailure> {
    config.validate()?;
    let data = model::generate_dataset(config.n, config.p, config.seed)?;
    run_on(config, &data)
}

/// Trains on the given data; `config.n`/`config.p` must match it.
pub fn run_on(config: &ExperimentConfig, data: &Dataset) -> Result<RunResult, RunFailure> {
    run_observed(config, data, |_, _| {})
}

/// [`run_on`], calling `observe(epoch, params)` after every epoch.
pub fn run_observed(
    config: &ExperimentConfig,
    data: &Dataset,
    mut observe: impl FnMut(usize, &NetworkParams),
) -> Result<RunResult, RunFailure> {
    config.validate()?;
    if data.n() != config.n || data.p() != config.p {
        return Err(Error::invalid(format!(
            "config expects n={}, p={}; dataset has n={}, p={}",
            config.n,
            config.p,
            data.n(),
            data.p()
        ))
        .into());
    }
    let mut params = model::init_params(config.m, config.p, config.seed)?;
    let initial_loss = model::loss(&params, data)?;
    let hybrid = config.hybrid_config();
    let gd = config.gd_config();

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut busy = Duration::ZERO;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let step = match config.optimizer {
            OptimizerKind::Hybrid => optimizers::hybrid_epoch(&params, data, &hybrid),
            OptimizerKind::Gd => optimizers::gd_epoch(&params, data, &gd),
        };
        busy += started.elapsed();
        let (next, stats) = match step {
            Ok(ok) => ok,
            Err(e) => {
                return Err(RunFailure {
                    metrics,
                    error: e.at_epoch(epoch),
                })
            }
        };
        let elapsed_s = match config.timing {
            Timing::Wall => busy.as_secs_f64(),
            Timing::Epochs => epoch as f64,
        };
        metrics.push(EpochMetrics::from_stats(epoch, elapsed_s, &stats));
        params = next;
        observe(epoch, &params);
    }
    Ok(RunResult {
        initial_loss,
        metrics,
        final_params: params,
    })
}

/// CSV text for a metrics sequence; reals carry 17 significant digits.
pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in metrics {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
            m.epoch,
            m.loss,
            m.ln_loss,
            m.elapsed_s,
            m.grad_updates,
            m.ls_updates,
            m.nochange_updates,
            m.ls_probes,
            m.cache_bytes
        )
        .unwrap();
    }
    out
}

pub fn emit_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    if metrics.is_empty() {
        return Err(Error::invalid("no metrics to write"));
    }
    fs::write(path, metrics_to_csv(metrics)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<EpochMetrics>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(err(1, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(err(
                ln,
                format!("expected 9 fields, found {}", fields.len()),
            ));
        }
        let int = |k: usize| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| err(ln, format!("field {}: {e}", k + 1)))
        };
        let real = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|e| err(ln, format!("field {}: {e}", k + 1)))
        };
        out.push(EpochMetrics {
            epoch: int(0)?,
            loss: real(1)?,
            ln_loss: real(2)?,
            elapsed_s: real(3)?,
            grad_updates: int(4)?,
            ls_updates: int(5)?,
            nochange_updates: int(6)?,
            ls_probes: int(7)?,
            cache_bytes: int(8)?,
        });
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Epoch,
    ElapsedSeconds,
}

impl XAxis {
    fn value(self, m: &EpochMetrics) -> f64 {
        match self {
            XAxis::Epoch => m.epoch as f64,
            XAxis::ElapsedSeconds => m.elapsed_s,
        }
    }

    fn label(self) -> &'static str {
        match self {
            XAxis::Epoch => "epoch",
            XAxis::ElapsedSeconds => "training time (s)",
        }
    }

    /// Suffix used in plot file names.
    pub fn file_tag(self) -> &'static str {
        match self {
            XAxis::Epoch => "epoch",
            XAxis::ElapsedSeconds => "time",
        }
    }
}

/// A labeled metrics sequence to draw.
#[derive(Debug, Clone, Copy)]
pub struct Curve<'a> {
    pub label: &'a str,
    pub metrics: &'a [EpochMetrics],
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `(lo, hi)` with a non-degenerate span.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// SVG line chart of `ln_loss` against the chosen axis, one polyline per
/// curve. `-inf` values sit on the bottom edge.
pub fn render_plot(curves: &[Curve<'_>], x_axis: XAxis) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::invalid("no curves to plot"));
    }
    if let Some(c) = curves.iter().find(|c| c.metrics.is_empty()) {
        return Err(Error::invalid(format!("curve `{}` is empty", c.label)));
    }
    let points = || curves.iter().flat_map(|c| c.metrics.iter());
    let (x_lo, x_hi) = padded_range(points().map(|m| x_axis.value(m)));
    let (y_lo, y_hi) = padded_range(points().map(|m| m.ln_loss).filter(|v| v.is_finite()));

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| {
        let y = if y.is_finite() {
            y
        } else if y > 0.0 {
            y_hi
        } else {
            y_lo
        };
        TOP + (y_hi - y) / (y_hi - y_lo) * plot_h
    };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();

    // axes
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let px = sx(xv);
        writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 20.0,
            tick(xv)
        )
        .unwrap();
        let yv = y_lo + t * (y_hi - y_lo);
        let py = sy(yv);
        writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(yv)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        x_axis.label()
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">ln(loss)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .metrics
            .iter()
            .map(|m| format!("{:.3},{:.3}", sx(x_axis.value(m)), sy(m.ln_loss)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();

        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(curve.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn emit_plot(curves: &[Curve<'_>], x_axis: XAxis, path: &Path) -> Result<()> {
    let svg = render_plot(curves, x_axis)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// One run inside a suite.
#[derive(Debug)]
pub struct SuiteRun {
    pub label: String,
    pub config: ExperimentConfig,
    pub outcome: Result<RunResult, RunFailure>,
}

impl SuiteRun {
    pub fn metrics(&self) -> &[EpochMetrics] {
        match &self.outcome {
            Ok(r) => &r.metrics,
            Err(f) => &f.metrics,
        }
    }
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub runs: Vec<SuiteRun>,
    pub csv_paths: Vec<PathBuf>,
    pub svg_paths: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &SuiteRun> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }
}

fn run_suite(
    name: &str,
    base: &ExperimentConfig,
    data: &Dataset,
    plan: Vec<(String, ExperimentConfig)>,
) -> Result<SuiteReport> {
    fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    let mut report = SuiteReport::default();
    for (label, config) in plan {
        let outcome = run_on(&config, data);
        let run = SuiteRun {
            label,
            config,
            outcome,
        };
        if !run.metrics().is_empty() {
            let path = base.output_dir.join(run.config.csv_name());
            emit_csv(run.metrics(), &path)?;
            report.csv_paths.push(path);
        }
        report.runs.push(run);
    }

    let curves: Vec<Curve<'_>> = report
        .runs
        .iter()
        .filter(|r| !r.metrics().is_empty())
        .map(|r| Curve {
            label: &r.label,
            metrics: r.metrics(),
        })
        .collect();
    let mut svg_paths = Vec::new();
    if !curves.is_empty() {
        for axis in [XAxis::Epoch, XAxis::ElapsedSeconds] {
            let path = base
                .output_dir
                .join(format!("{name}_{}.svg", axis.file_tag()));
            emit_plot(&curves, axis, &path)?;
            svg_paths.push(path);
        }
    }
    report.svg_paths = svg_paths;
    Ok(report)
}

fn suite_data(base: &ExperimentConfig, data: Option<&Dataset>) -> Result<Dataset> {
    match data {
        Some(d) => Ok(d.clone()),
        None => model::generate_dataset(base.n, base.p, base.seed),
    }
}

/// Both optimizers for every `m`, on one dataset and one seed.
///
/// Writes one CSV per run plus `compare_epoch.svg` and `compare_time.svg`.
pub fn compare_suite(
    base: &ExperimentConfig,
    m_values: &[usize],
    data: Option<&Dataset>,
) -> Result<SuiteReport> {
    if m_values.is_empty() {
        return Err(Error::invalid("m list is empty"));
    }
    let mut plan = Vec::new();
    for &m in m_values {
        for optimizer in [OptimizerKind::Gd, OptimizerKind::Hybrid] {
            let config = ExperimentConfig {
                optimizer,
                m,
                ..base.clone()
            };
            config.validate()?;
            plan.push((format!("{optimizer} m={m}"), config));
        }
    }
    let data = suite_data(base, data)?;
    run_suite("compare", base, &data, plan)
}

/// The hybrid optimizer once per `dw`, on one dataset and one seed.
///
/// Writes one CSV per run plus `sweep_dw_epoch.svg` and `sweep_dw_time.svg`.
pub fn sweep_dw(
    base: &ExperimentConfig,
    dw_values: &[f64],
    data: Option<&Dataset>,
) -> Result<SuiteReport> {
    if dw_values.is_empty() {
        return Err(Error::invalid("dw list is empty"));
    }
    let mut plan = Vec::new();
    for &dw in dw_values {
        let config = ExperimentConfig {
            optimizer: OptimizerKind::Hybrid,
            dw,
            ..base.clone()
        };
        config.validate()?;
        plan.push((format!("dw={dw}"), config));
    }
    let data = suite_data(base, data)?;
    run_suite("sweep_dw", base, &data, plan)
}
