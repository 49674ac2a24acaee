//! `homsim` command line: simulate | analyze | reproduce | calibrate.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O or stream
//! format error, 4 internal or estimation failure.

pub mod output;

use crate::analysis::{self, report, AnalysisError, Estimate, FitPoint, HomPair, SweepSettings, Table, WindowPolicy};
use crate::calibrate;
use crate::mcsim::{meta, ExperimentConfig, McError, Simulator};
use crate::reproduce::{self, Figure, ReproduceError, ReproduceOptions, StageError};
use crate::timetag::{self, TagWindow, TimeTagError, TimeTagStream};
use clap::{Args, Parser, Subcommand};
use output::{display, ensure_dir, write_atomic, write_json, write_table, write_text, Format, RunManifest};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "HOMSIM_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Config(_) | McError::Unsupported(_) | McError::Waveform(_) | McError::Model(_) => {
                CliError::Config(e.to_string())
            }
            McError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<TimeTagError> for CliError {
    fn from(e: TimeTagError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        use AnalysisError::*;
        match e {
            EmptyWindow | WindowOutsidePeriod { .. } | OverlappingWindows | MisorderedWindows | OffsetTooLarge { .. }
            | InvalidBin(_) | ZeroEfficiency(_) | TrialStructure(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ReproduceError> for CliError {
    fn from(e: ReproduceError) -> Self {
        let msg = e.to_string();
        match e.source {
            StageError::Sim(McError::Io { .. }) => CliError::Io(msg),
            StageError::Sim(_) | StageError::Waveform(_) => CliError::Config(msg),
            StageError::Analysis(_) => CliError::Internal(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "homsim", version, about = "HOM interference simulator and time-tag analysis")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a configuration into a binary time-tag stream.
    Simulate(SimulateArgs),
    /// Estimate g2, visibility, eta, P_SP from time-tag streams.
    Analyze(AnalyzeArgs),
    /// Regenerate the data behind one figure and compare with the published values.
    Reproduce(ReproduceArgs),
    /// Solve the bundled presets from the target overlaps and print them.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    PaperOr,
    PaperEit,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["config", "preset"]))]
pub struct SimulateArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use a bundled configuration instead of a file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured number of trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Override the port-b delay, e.g. `1500ns` (a distinguishable run).
    #[arg(long, value_parser = parse_duration_ns)]
    pub delay: Option<f64>,
    /// Output stream file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyArg {
    /// Centered on the pulse peak.
    Centered,
    /// Placed to hold the most source counts.
    MaxCounts,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Indistinguishable stream(s); repeat for a visibility scan.
    #[arg(long, required = true)]
    pub ind: Vec<PathBuf>,
    /// Distinguishable stream(s), one per `--ind`, same order.
    #[arg(long, required = true)]
    pub dist: Vec<PathBuf>,
    /// Detection-window width, e.g. `500ns` or `0.5us`.
    #[arg(long, default_value = "500ns", value_parser = parse_duration_ns)]
    pub window: f64,
    /// Pulse peak (default: the source mode center recorded in the stream).
    #[arg(long, value_parser = parse_duration_ns)]
    pub center: Option<f64>,
    /// Window placement.
    #[arg(long, value_enum, default_value = "centered")]
    pub policy: PolicyArg,
    /// Port-b delay of the distinguishable runs (default: from stream metadata).
    #[arg(long, value_parser = parse_duration_ns)]
    pub fold_delay: Option<f64>,
    /// Per-detector detection efficiency for P_SP (default: from the stream's config).
    #[arg(long)]
    pub eps_det: Option<f64>,
    /// Fit eta over all stream pairs.
    #[arg(long)]
    pub fit_eta: bool,
    /// Also report eta corrected for the configured beamsplitter imbalance.
    #[arg(long, requires = "fit_eta")]
    pub bs_correct: bool,
    /// Comma-separated window widths for a sweep, e.g. `100ns,200ns,500ns`.
    #[arg(long, value_delimiter = ',', value_parser = parse_duration_ns)]
    pub sweep: Vec<f64>,
    /// Time-resolved visibility with this bin width, e.g. `20ns`.
    #[arg(long, value_parser = parse_duration_ns)]
    pub bins: Option<f64>,
    /// Cross-trial g2 of the first distinguishable stream's source window up to this offset.
    #[arg(long)]
    pub cross_trial: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Directory receiving one file per table plus `manifest.json`.
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    /// Trials per simulated stream.
    #[arg(long, default_value_t = ReproduceOptions::default().n_trials)]
    pub trials: u64,
    #[arg(long, default_value_t = ReproduceOptions::default().seed)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Output directory (default: `reproduce/<figure>`).
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Write calibration.json and the preset configurations into this directory.
    #[arg(long)]
    pub write_presets: Option<PathBuf>,
}

/// Parses `500ns`, `0.5us`, `1.2 ms`, `2s` or a bare number of ns into ns.
pub fn parse_duration_ns(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic() || c == 'µ').unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.trim().parse().map_err(|_| format!("invalid duration `{s}`"))?;
    let scale = match unit.trim() {
        "" | "ns" => 1.0,
        "ps" => 1e-3,
        "us" | "µs" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        u => return Err(format!("unknown time unit `{u}` in `{s}` (use ps, ns, us, ms, s)")),
    };
    let ns = v * scale;
    if !ns.is_finite() || ns < 0.0 {
        return Err(format!("duration must be finite and >= 0, got `{s}`"));
    }
    Ok(ns)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("homsim: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let work = move || match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Reproduce(a) => reproduce_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
    };
    match cli.threads {
        Some(0) => Err(CliError::Config(format!("--threads / {THREADS_ENV} must be at least 1"))),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => load_config(p)?,
        (None, Some(Preset::PaperOr)) => calibrate::paper_or(),
        (None, Some(Preset::PaperEit)) => calibrate::paper_eit(),
        (None, None) => unreachable!("clap requires a source"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.trials {
        cfg.n_trials = n;
    }
    if let Some(d) = a.delay {
        cfg.distinguishable_delay = d;
    }
    let sim = Simulator::new(&cfg)?;
    let start = Instant::now();
    let records = write_atomic(&a.out, |w| Ok(sim.run_to_writer(w)?))?;
    let secs = start.elapsed().as_secs_f64();
    let rate = cfg.n_trials as f64 / secs.max(1e-9);
    eprintln!(
        "simulated {} trials ({} records) in {secs:.2} s: {rate:.3e} trials/s",
        cfg.n_trials, records
    );
    let manifest_path = a
        .manifest
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", a.out.display())));
    let mut m = RunManifest::new("simulate");
    m.config_path = Some(match (&a.config, a.preset) {
        (Some(p), _) => display(p),
        (_, Some(p)) => format!("preset:{p:?}"),
        _ => unreachable!(),
    });
    m.config_fingerprint = Some(cfg.fingerprint_hex());
    m.seed = Some(cfg.seed);
    m.outputs = vec![display(&a.out)];
    m.wall_clock_s = secs;
    m.n_trials = Some(cfg.n_trials);
    m.trials_per_sec = Some(rate);
    m.records = Some(records);
    write_json(&manifest_path, &m)
}

fn read_stream(path: &Path) -> Result<TimeTagStream, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let ctx = |e: TimeTagError| CliError::Io(format!("{}: {e}", path.display()));
    let reader = timetag::read_stream(f).map_err(ctx)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>, _>>().map_err(ctx)?;
    Ok(TimeTagStream::new(header, records))
}

fn stream_config(s: &TimeTagStream) -> Option<ExperimentConfig> {
    s.header.meta(meta::CONFIG).and_then(|t| serde_json::from_str(t).ok())
}

/// Warns when a pair does not come from the same source configuration.
fn check_lineage(ind: &Path, dist: &Path, a: &TimeTagStream, b: &TimeTagStream) {
    match (stream_config(a), stream_config(b)) {
        (Some(x), Some(y)) => {
            if x.sp_source != y.sp_source || x.chain != y.chain || x.trial_period != y.trial_period {
                eprintln!(
                    "warning: {} and {} were generated from different source configurations ({} vs {})",
                    ind.display(),
                    dist.display(),
                    &a.header.fingerprint_hex()[..12],
                    &b.header.fingerprint_hex()[..12]
                );
            }
        }
        _ => eprintln!(
            "warning: cannot check lineage of {} / {}: no configuration recorded",
            ind.display(),
            dist.display()
        ),
    }
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    if a.ind.len() != a.dist.len() {
        return Err(CliError::Config(format!(
            "{} --ind streams but {} --dist streams",
            a.ind.len(),
            a.dist.len()
        )));
    }
    let mut streams = Vec::new();
    for (i, d) in a.ind.iter().zip(&a.dist) {
        let (si, sd) = (read_stream(i)?, read_stream(d)?);
        check_lineage(i, d, &si, &sd);
        streams.push((si, sd));
    }
    let first_dist = &streams[0].1;
    let cfg = stream_config(first_dist);
    let center = a
        .center
        .or(cfg.as_ref().map(|c| c.sp_source.mode.center))
        .ok_or_else(|| CliError::Config("no --center given and the stream records no configuration".into()))?;
    let delay_ns = match a.fold_delay {
        Some(d) => d,
        None => first_dist
            .header
            .meta(meta::DELAY_NS)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Config("no --fold-delay given and the stream records no delay".into()))?,
    };
    let delay = reproduce::ps(delay_ns);
    let eps_det = a.eps_det.or(cfg.as_ref().map(|c| 0.5 * c.sp_efficiency()));
    let pairs: Vec<HomPair<'_>> = streams.iter().map(|(ind, dist)| HomPair { ind, dist }).collect();
    let policy = match a.policy {
        PolicyArg::Centered => WindowPolicy::Centered {
            center_ps: reproduce::ps(center),
        },
        PolicyArg::MaxCounts => WindowPolicy::MaxCounts {
            search: TagWindow::from_ns(0.0, center + 0.5 * delay_ns),
        },
    };
    let window = analysis::place_windows(&pairs, &[reproduce::ps(a.window)], policy)[0]
        .ok_or_else(|| CliError::Config(format!("a {} ns window does not fit before the pulse center", a.window)))?;

    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let mut emit = |t: &Table| -> Result<(), CliError> {
        outputs.push(display(&write_table(&a.out_dir, t, a.format)?));
        Ok(())
    };

    let mut points = Vec::new();
    let mut hom = Table::new(
        "hom_points",
        &[
            "ind", "dist", "window_start_ns", "window_end_ns", "p1", "sigma_p1", "alpha2", "sigma_alpha2", "g2",
            "sigma_g2", "alpha2_over_2p1", "v", "sigma_v",
        ],
    );
    for ((ip, dp), p) in a.ind.iter().zip(&a.dist).zip(&pairs) {
        let op = analysis::extract_operating_point(p.dist, window, window.shifted(delay as i64))?;
        let v = analysis::hom_visibility_measured(p.ind, p.dist, window, delay)?;
        let fp = FitPoint {
            p1: op.p1.value,
            alpha2: op.alpha2.value,
            g2zero: op.g2zero.value,
            v: v.v.value,
            sigma_v: v.v.sigma,
        };
        let n = |x: f64| serde_json::json!(x);
        hom.push(vec![
            serde_json::json!(display(ip)),
            serde_json::json!(display(dp)),
            n(window.start_ps as f64 * 1e-3),
            n(window.end_ps as f64 * 1e-3),
            n(op.p1.value),
            n(op.p1.sigma),
            n(op.alpha2.value),
            n(op.alpha2.sigma),
            n(op.g2zero.value),
            n(op.g2zero.sigma),
            n(fp.x()),
            n(v.v.value),
            n(v.v.sigma),
        ]);
        points.push(fp);
    }
    emit(&hom)?;
    for (name, s) in [("stats_ind", &streams[0].0), ("stats_dist", first_dist)] {
        let gate = if name == "stats_dist" {
            analysis::Gate::folded(window, delay)
        } else {
            analysis::Gate::plain(window)
        };
        emit(&report::stats_table(name, &analysis::gated_stats(s, &gate)?))?;
    }

    if a.fit_eta {
        let fit = analysis::fit_eta(&points)?;
        for t in report::fit_tables(&fit) {
            emit(&t)?;
        }
        if a.bs_correct {
            let t_bs = cfg
                .as_ref()
                .map(|c| c.chain.bs_transmittance)
                .ok_or_else(|| CliError::Config("--bs-correct needs the configuration recorded in the stream".into()))?;
            let c = analysis::bs_imbalance_correction(Estimate::new(fit.eta_hat, fit.sigma_eta), t_bs);
            let mut t = Table::new(
                "bs_imbalance",
                &["transmittance", "factor", "eta_corrected", "sigma_eta_corrected", "delta", "physical"],
            );
            let n = |x: f64| serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, Into::into);
            t.push(vec![
                n(t_bs),
                n(c.factor),
                n(c.eta_corrected.value),
                n(c.eta_corrected.sigma),
                n(c.delta),
                serde_json::json!(c.physical),
            ]);
            emit(&t)?;
        }
    }
    if !a.sweep.is_empty() {
        let eps_det = eps_det.ok_or_else(|| CliError::Config("--sweep needs --eps-det (no configuration recorded)".into()))?;
        let widths: Vec<u64> = a.sweep.iter().map(|&w| reproduce::ps(w)).collect();
        let rows = analysis::window_sweep(
            &pairs,
            &widths,
            policy,
            &SweepSettings {
                fold_delay_ps: delay,
                eps_det,
            },
        )?;
        emit(&report::sweep_table(&rows))?;
    }
    if let Some(bin) = a.bins {
        if let Some(j) = cfg.as_ref().map(|c| c.chain.timing_jitter_sigma) {
            if bin <= j {
                return Err(CliError::Config(format!(
                    "bin width {bin} ns must exceed the timing jitter of {j} ns"
                )));
            }
        }
        let bins = analysis::time_resolved_visibility(pairs[0].ind, pairs[0].dist, window, reproduce::ps(bin), delay)?;
        emit(&report::time_bins_table(&bins))?;
    }
    if let Some(k) = a.cross_trial {
        emit(&report::cross_trial_table(&analysis::cross_trial_g2(first_dist, window, k)?))?;
    }

    let mut m = RunManifest::new("analyze");
    m.config_fingerprint = Some(first_dist.header.fingerprint_hex());
    m.inputs = a.ind.iter().chain(&a.dist).map(|p| display(p)).collect();
    m.outputs = outputs;
    m.wall_clock_s = start.elapsed().as_secs_f64();
    m.records = Some(streams.iter().map(|(x, y)| (x.records.len() + y.records.len()) as u64).sum());
    write_json(&a.out_dir.join("manifest.json"), &m)
}

fn reproduce_cmd(a: ReproduceArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let opts = ReproduceOptions {
        n_trials: a.trials,
        seed: a.seed,
    };
    let out = reproduce::reproduce(a.figure, &opts)?;
    let dir = a
        .out_dir
        .unwrap_or_else(|| PathBuf::from("reproduce").join(a.figure.id()));
    ensure_dir(&dir)?;
    let mut outputs = Vec::new();
    for t in out.tables.iter().chain(std::iter::once(&out.comparison_table())) {
        outputs.push(display(&write_table(&dir, t, a.format)?));
    }
    println!("{:<60} {:>8} {:>10} {:>9} {:>6}", "quantity", "paper", "simulated", "tol", "");
    for c in &out.comparisons {
        println!(
            "{:<60} {:>8.3} {:>10.4} {:>9.3} {:>6}",
            c.quantity,
            c.paper,
            c.simulated,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let mut m = RunManifest::new(&format!("reproduce {}", a.figure.id()));
    m.seed = Some(a.seed);
    m.n_trials = Some(a.trials);
    m.outputs = outputs;
    m.wall_clock_s = start.elapsed().as_secs_f64();
    write_json(&dir.join("manifest.json"), &m)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<(), CliError> {
    let cal = calibrate::calibrate().map_err(|e| CliError::Internal(e.to_string()))?;
    let presets = calibrate::render_presets(&cal).map_err(|e| CliError::Internal(e.to_string()))?;
    if let Some(dir) = a.write_presets {
        ensure_dir(&dir)?;
        for (name, text) in &presets {
            write_text(&dir.join(name), text)?;
        }
    }
    print!("{}", presets[0].1);
    Ok(())
}
