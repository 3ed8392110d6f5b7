mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arnet_core::compare::{
    compare_models, fit_baseline_with, forecast, roc_matrix, CompareSettings, ComparisonReport,
};
use arnet_core::estimate::{fit, rmae_block, rmae_scalar, FitMethod, FitReport, StartReport};
use arnet_core::kernels::Kernel;
use arnet_core::likelihood::Panel;
use arnet_core::params::ParameterSet;
use arnet_core::series::{SeriesFormat, SnapshotSeries};
use arnet_core::simulate::{diagnostics, simulate};
use arnet_core::ArnetError;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use config::*;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Optimizer(String),
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Optimizer(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Optimizer(m) => write!(f, "optimizer error: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ArnetError> for CliError {
    fn from(e: ArnetError) -> Self {
        let msg = e.to_string();
        match e {
            ArnetError::Io { .. }
            | ArnetError::Parse { .. }
            | ArnetError::Dimension { .. }
            | ArnetError::Value { .. }
            | ArnetError::Index { .. } => CliError::Io(msg),
            ArnetError::UnknownKernel(_)
            | ArnetError::InvalidArgument(_)
            | ArnetError::TooFewSnapshots { .. } => CliError::Config(msg),
            ArnetError::Optimizer(_)
            | ArnetError::LpInfeasible
            | ArnetError::LpUnbounded
            | ArnetError::NonFinite(_) => CliError::Optimizer(msg),
            _ => CliError::Other(msg),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Autoregressive dynamic network models: simulation, estimation with
/// confidence intervals, diagnostics, model comparison and forecasting.
#[derive(Parser)]
#[command(name = "arnet", version)]
struct Cli {
    /// Worker threads (default: all cores). ARNET_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a snapshot series and its descriptive statistics.
    #[command(after_long_help = SIMULATE_KEYS)]
    Simulate(SimulateArgs),
    /// Fit a kernel model and report estimates with confidence intervals.
    #[command(after_long_help = format!("{FIT_KEYS}\n\n{ESTIMATION_KEYS}"))]
    Fit(FitArgs),
    /// Density, growth, dissolution and neighbour-count tables of a series.
    Diagnose(DiagnoseArgs),
    /// AIC/BIC table and forecast AUCs for the baseline models.
    #[command(after_long_help = format!("{COMPARE_KEYS}\n\n{ESTIMATION_KEYS}"))]
    Compare(ConfigArgs),
    /// Fit one model, forecast the held-out snapshots and write ROC curves.
    #[command(after_long_help = format!("{FORECAST_KEYS}\n\n{ESTIMATION_KEYS}"))]
    Forecast(ForecastArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Fit config (JSON); optional when --model and --data are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Kernel id, overrides `model`.
    #[arg(long)]
    model: Option<String>,
    /// Series file, overrides `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// mle | imom | mle+imom-init, overrides `method`.
    #[arg(long)]
    method: Option<String>,
    /// Fit this many simulated series instead of --data.
    #[arg(long, requires = "sim")]
    replications: Option<usize>,
    /// Seed of replication 0; replication r uses seed-base + r.
    #[arg(long)]
    seed_base: Option<u64>,
    /// Simulation config giving the truth for --replications.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Output directory, or the report path when it ends in .json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Series file.
    #[arg(long)]
    data: PathBuf,
    /// matrix-text | edge-csv (default: from the extension).
    #[arg(long)]
    format: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Comma-separated horizons, overrides `steps`.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("ARNET_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("ARNET_THREADS: not a thread count: `{v}`"))),
        Err(_) => Ok(flag),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn load_series(path: &Path, format: Option<&str>) -> Result<SnapshotSeries> {
    let format = match format {
        Some(f) => parse_format("format", f)?,
        None => SeriesFormat::from_path(path),
    };
    Ok(SnapshotSeries::load(path, format)?)
}

fn write_diagnostics(series: &SnapshotSeries, out: &Path) -> Result<()> {
    let table = diagnostics(series)?;
    write_file(&out.join("density.csv"), &table.density_csv())?;
    write_file(&out.join("u_table.csv"), &table.u_csv())?;
    write_file(&out.join("v_table.csv"), &table.v_csv())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = read_config(&args.config)?;
    let format = cfg.format()?;
    let series = simulate(&cfg.sim_config(cfg.seed)?)?;
    create_dir(&args.out)?;
    let name = match format {
        SeriesFormat::MatrixText => "series.txt",
        SeriesFormat::EdgeCsv => "series.csv",
    };
    series.save(args.out.join(name), format)?;
    write_diagnostics(&series, &args.out)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let series = load_series(&args.data, args.format.as_deref())?;
    create_dir(&args.out)?;
    write_diagnostics(&series, &args.out)
}

fn run_fit(kernel: Kernel, series: &SnapshotSeries, method: FitMethod, cfg: &FitConfig) -> Result<FitReport> {
    let panel = Panel::new(&kernel, series)?;
    Ok(fit(&panel, method, &cfg.estimation)?)
}

/// Per-start estimates of one pipeline stage, when every start has it.
fn stage<'a>(starts: &'a [StartReport], pick: fn(&StartReport) -> Option<&Vec<f64>>) -> Option<Vec<&'a [f64]>> {
    starts.iter().map(|s| pick(s).map(Vec::as_slice)).collect()
}

/// rMAE of every global and of each local block, averaged over starts.
fn stage_rmae(truth: &ParameterSet, estimates: &[&[f64]]) -> BTreeMap<String, f64> {
    let kernel = truth.kernel();
    let g = kernel.num_globals();
    let mut out = BTreeMap::new();
    for (l, name) in kernel.id().global_names().iter().enumerate() {
        let e: Vec<f64> = estimates.iter().map(|x| x[l]).collect();
        out.insert(name.to_string(), rmae_scalar(&e, truth.values()[l]));
    }
    let mut block = |name: &str, range: std::ops::Range<usize>| {
        if range.is_empty() {
            return;
        }
        let e: Vec<&[f64]> = estimates.iter().map(|x| &x[range.clone()]).collect();
        out.insert(name.to_string(), rmae_block(&e, &truth.values()[range.clone()]));
    };
    let q = truth.values().len();
    if kernel.id().has_node_params() {
        let p = kernel.p();
        block("xi", g..g + p);
        block("eta", g + p..g + 2 * p);
    } else {
        block("locals", g..q);
    }
    out
}

#[derive(Serialize)]
struct ReplicationSummary {
    kernel: String,
    method: String,
    replications: usize,
    seed_base: u64,
    /// Stage -> parameter or block -> rMAE averaged over replications.
    rmae: BTreeMap<String, BTreeMap<String, f64>>,
}

fn summarize(truth: &ParameterSet, method: FitMethod, seed_base: u64, reports: &[FitReport]) -> ReplicationSummary {
    let stages: [(&str, fn(&StartReport) -> Option<&Vec<f64>>); 4] = [
        ("initial", |s| Some(&s.initial)),
        ("imom", |s| s.imom.as_ref()),
        ("joint", |s| s.joint.as_ref()),
        ("final", |s| s.refined.as_ref()),
    ];
    let mut rmae = BTreeMap::new();
    for (name, pick) in stages {
        let per_rep: Option<Vec<BTreeMap<String, f64>>> = reports
            .iter()
            .map(|r| stage(&r.starts, pick).map(|e| stage_rmae(truth, &e)))
            .collect();
        let Some(per_rep) = per_rep else { continue };
        let mut mean: BTreeMap<String, f64> = BTreeMap::new();
        for m in &per_rep {
            for (k, v) in m {
                *mean.entry(k.clone()).or_default() += v / per_rep.len() as f64;
            }
        }
        rmae.insert(name.to_string(), mean);
    }
    ReplicationSummary {
        kernel: truth.kernel().id().to_string(),
        method: method.as_str().to_string(),
        replications: reports.len(),
        seed_base,
        rmae,
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let cfg: FitConfig = match &args.config {
        Some(path) => read_config(path)?,
        None => FitConfig::default(),
    };
    cfg.estimation
        .validate()
        .map_err(|e| CliError::Config(format!("field `estimation`: {e}")))?;
    let method = match args.method.as_deref().or(cfg.method.as_deref()) {
        Some(m) => parse_method("method", m)?,
        None => FitMethod::Mle,
    };
    let model = args.model.as_deref().or(cfg.model.as_deref());

    if let Some(reps) = args.replications {
        let sim_path = args.sim.as_ref().expect("clap enforces --sim");
        let sim: SimulateConfig = read_config(sim_path)?;
        let truth = sim.truth()?;
        let kernel = match model {
            Some(m) => Kernel::new(parse_kernel("model", m)?, sim.p)?,
            None => *truth.kernel(),
        };
        if kernel.id() != truth.kernel().id() {
            return Err(CliError::Config(format!(
                "field `model`: fitting {} to data simulated from {}",
                kernel.id(),
                truth.kernel().id()
            )));
        }
        let seed_base = args.seed_base.unwrap_or(cfg.seed);
        create_dir(&args.out)?;
        let reports = (0..reps)
            .into_par_iter()
            .map(|r| {
                let series = simulate(&sim.sim_config(seed_base + r as u64)?)?;
                run_fit(kernel, &series, method, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, report) in reports.iter().enumerate() {
            write_json(&args.out.join(format!("rep_{r:03}.json")), report)?;
        }
        return write_json(&args.out.join("summary.json"), &summarize(&truth, method, seed_base, &reports));
    }

    let model = model.ok_or_else(|| CliError::Config("field `model`: required".into()))?;
    let id = parse_kernel("model", model)?;
    let data = match (&args.data, &cfg.data) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => resolve(args.config.as_deref(), d),
        (None, None) => return Err(CliError::Config("field `data`: required".into())),
    };
    let series = load_series(&data, cfg.format.as_deref())?;
    let kernel = Kernel::new(id, series.p())?;
    let report = run_fit(kernel, &series, method, &cfg)?;
    let target = if args.out.extension().is_some_and(|e| e == "json") {
        if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        args.out.clone()
    } else {
        create_dir(&args.out)?;
        args.out.join("fit.json")
    };
    write_json(&target, &report)
}

fn criteria_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("model,num_params,num_obs,loglik,aic,bic");
    for h in &report.steps {
        let _ = write!(out, ",auc_h{h}");
    }
    out.push('\n');
    let auc = |a: &Option<f64>| a.map_or_else(String::new, |v| v.to_string());
    for m in &report.models {
        let c = &m.criteria;
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            m.model, c.num_params, c.num_obs, c.loglik, c.aic, c.bic
        );
        for a in &m.auc {
            let _ = write!(out, ",{}", auc(a));
        }
        out.push('\n');
    }
    let _ = write!(out, "previous-edge,,,,,");
    for a in &report.previous_edge_auc {
        let _ = write!(out, ",{}", auc(a));
    }
    out.push('\n');
    out
}

fn cmd_compare(args: &ConfigArgs) -> Result<()> {
    let cfg: CompareConfig = read_config(&args.config)?;
    let series = load_series(&resolve(Some(&args.config), &cfg.data), cfg.format.as_deref())?;
    let models = match &cfg.models {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(k, m)| parse_baseline(&format!("models[{k}]"), m))
            .collect::<Result<Vec<_>>>()?,
        None => CompareSettings::default().models,
    };
    let split = split_for(cfg.split, series.n(), &cfg.steps)?;
    let settings = CompareSettings {
        models,
        mc_paths: cfg.mc_paths,
        seed: cfg.seed,
        estimation: cfg.estimation.clone(),
    };
    let report = compare_models(&series, split, &cfg.steps, &settings)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("comparison.json"), &report)?;
    write_file(&args.out.join("criteria.csv"), &criteria_csv(&report))
}

#[derive(Serialize)]
struct ForecastSummary {
    model: String,
    split: usize,
    steps: Vec<usize>,
    /// `None` when the held-out snapshot has a single class.
    auc: Vec<Option<f64>>,
}

fn cmd_forecast(args: &ForecastArgs) -> Result<()> {
    let cfg: ForecastConfig = read_config(&args.base.config)?;
    let model = parse_baseline("model", &cfg.model)?;
    let steps = args.steps.clone().unwrap_or_else(|| cfg.steps.clone());
    let series = load_series(&resolve(Some(&args.base.config), &cfg.data), cfg.format.as_deref())?;
    let split = split_for(cfg.split, series.n(), &steps)?;
    if let Some(&h) = steps.iter().find(|&&h| h == 0 || split + h > series.n()) {
        return Err(CliError::Config(format!(
            "field `steps`: horizon {h} reaches past the end of the series (n = {}, split {split})",
            series.n()
        )));
    }
    let train = series.slice(0, split)?;
    let fitted = fit_baseline_with(model, &train, &cfg.estimation)?;
    create_dir(&args.base.out)?;
    let mut auc = Vec::new();
    for &h in &steps {
        let probs = forecast(&fitted, &train, h, cfg.mc_paths, cfg.seed)?;
        match roc_matrix(&probs, series.get(split + h - 1)) {
            Ok(curve) => {
                write_file(&args.base.out.join(format!("roc_h{h}.csv")), &curve.to_csv())?;
                auc.push(Some(curve.auc));
            }
            Err(ArnetError::Undefined(msg)) => {
                eprintln!("warning: step {h}: {msg}; no ROC curve written");
                auc.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary = ForecastSummary {
        model: model.to_string(),
        split,
        steps,
        auc,
    };
    write_json(&args.base.out.join("forecast.json"), &summary)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Forecast(a) => cmd_forecast(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arnet: {e}");
            ExitCode::from(e.code())
        }
    }
}
