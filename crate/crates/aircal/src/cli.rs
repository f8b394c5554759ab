//! The `aircal` command-line tool.
//!
//! Thin plumbing over the library: each subcommand reads files with the
//! [`crate::io`] parsers, calls one library entry point, and writes one
//! output file. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical
//! failure; diagnostics go to standard error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::bayes::{grid_posterior, mcmc_filter_time_point, summarize_posterior, PriorSpec};
use crate::calib::{
    fit_inverse_regression, fit_pareto, fit_regression_calibration, predict_pareto,
    predict_regcal, CovariateSchema, EPS_GAIN,
};
use crate::covariance::{empirical_variogram, KernelFamily};
use crate::error::{Error, Result};
use crate::filter::{filter_slice, predict_grid, FilterConfig, MleConfig};
use crate::geo::{build_time_slice, Location, NetworkLayout, PanelDataset, SiteRole, Window};
use crate::io::{
    metrics_rows, read_calibration_csv, read_grid_points, read_model_json, read_network_csv,
    read_observations_csv, write_calibration_csv, write_grid_csv, write_metrics_csv,
    write_model_json, write_variogram_csv, CalibrationRow, GridRow, MetricsRow, ModelFile,
    RunConfig,
};
use crate::sim::{compute_metrics, run_scenario, Method, Scenario, ScenarioConfig};

const LONG_ABOUT: &str = "\
Calibrate dense low-cost sensor networks against sparse reference monitors.

A JSON file passed with --config supersedes the matching flags; the
AIRCAL_THREADS and AIRCAL_SEED environment variables supersede both.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.";

#[derive(Parser)]
#[command(name = "aircal", version, about = "Low-cost sensor network calibration", long_about = LONG_ABOUT)]
struct Cli {
    /// JSON run configuration; its fields supersede flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for the simulation benchmarks.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Random seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the observation model (readings on truth) on collocated pairs.
    FitObs(FitArgs),
    /// Fit the forward regression-calibration baseline.
    FitRegcal(FitArgs),
    /// Fit the threshold-exceedance model.
    FitPareto(FitParetoArgs),
    /// Calibrate observations with a fitted model.
    Calibrate(CalibrateArgs),
    /// Krige the calibrated field onto grid locations.
    PredictGrid(PredictGridArgs),
    /// Run a simulation benchmark scenario.
    Simulate(SimulateArgs),
    /// Score a calibration file against reference truth.
    Metrics(MetricsArgs),
    /// Empirical semivariogram of one time slice.
    Variogram(VariogramArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Network CSV (site_id,x,y,role).
    #[arg(long, value_name = "FILE")]
    network: Option<PathBuf>,

    /// Observations CSV (site_id,t,y,x_ref,<covariates…>).
    #[arg(long, value_name = "FILE")]
    observations: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Training window as t0:t1, half-open (default: all times).
    #[arg(long, value_name = "T0:T1")]
    window: Option<String>,

    /// Covariate columns to include, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    covariates: Vec<String>,

    /// Covariates that enter the offset only (subset of --covariates).
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    offset_only: Vec<String>,

    /// Output model JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitParetoArgs {
    #[command(flatten)]
    fit: FitArgs,

    /// Exceedance threshold.
    #[arg(long, value_name = "X")]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SpatialArgs {
    /// Covariance family: exponential, matern32, or sqexp.
    #[arg(long, value_name = "FAMILY")]
    family: Option<String>,

    /// Estimate a nugget term in the spatial fit (default: on).
    #[arg(long, value_name = "BOOL", default_value_t = true, action = clap::ArgAction::Set)]
    fit_nugget: bool,

    /// Pin the decay rate instead of estimating it per time point.
    #[arg(long, value_name = "PHI")]
    fixed_phi: Option<f64>,
}

#[derive(Args)]
struct McmcArgs {
    /// Sampler iterations (gpfilter-bayes).
    #[arg(long, value_name = "N")]
    mcmc_iters: Option<usize>,

    /// Burn-in iterations (gpfilter-bayes).
    #[arg(long, value_name = "N")]
    mcmc_burn: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Fitted model JSON.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,

    /// gpfilter-freq, gpfilter-bayes, regcal, inverse, or pareto
    /// (default: chosen from the model type).
    #[arg(long, value_name = "METHOD")]
    method: Option<String>,

    /// Restrict to a window t0:t1 (default: all times).
    #[arg(long, value_name = "T0:T1")]
    window: Option<String>,

    #[command(flatten)]
    spatial: SpatialArgs,

    #[command(flatten)]
    mcmc: McmcArgs,

    /// Output CSV (site_id,t,xhat,sd,lower,upper,flag).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictGridArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Fitted observation-model JSON.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,

    /// Grid points CSV with header x,y (default: the network's D sites).
    #[arg(long, value_name = "FILE")]
    grid: Option<PathBuf>,

    /// gpfilter-freq or gpfilter-bayes.
    #[arg(long, value_name = "METHOD")]
    method: Option<String>,

    /// Restrict to a window t0:t1 (default: all times).
    #[arg(long, value_name = "T0:T1")]
    window: Option<String>,

    #[command(flatten)]
    spatial: SpatialArgs,

    #[command(flatten)]
    mcmc: McmcArgs,

    /// Output CSV (x,y,t,mean,sd,lower,upper).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// 1a, 1b-refs, 1b-sensors, 2-under, 2-over, or 3-pointsource.
    #[arg(long, value_name = "SCENARIO")]
    scenario: String,

    /// desk (10 replicates, 500/50 split) or paper (50, 1000/100).
    #[arg(long, default_value = "desk", value_name = "PROFILE")]
    profile: String,

    /// Field variance.
    #[arg(long, value_name = "S2")]
    sigma2: Option<f64>,

    /// Methods to compare, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "gpfilter-freq,regcal,inverse,pareto",
        value_name = "METHODS"
    )]
    methods: Vec<String>,

    #[arg(long, value_name = "N")]
    replicates: Option<usize>,

    #[arg(long, value_name = "N")]
    train: Option<usize>,

    #[arg(long, value_name = "N")]
    test: Option<usize>,

    /// Sensor-only sites.
    #[arg(long, value_name = "N")]
    sensors: Option<usize>,

    /// Plume width (point-source scenario).
    #[arg(long, value_name = "G")]
    gamma: Option<f64>,

    /// Sensor noise variance.
    #[arg(long, value_name = "T2")]
    tau2: Option<f64>,

    /// Output metrics CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Calibration CSV to score.
    #[arg(long, value_name = "FILE")]
    pred: Option<PathBuf>,

    /// Observations CSV holding the truth in x_ref.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,

    /// Network CSV; enables the distance-binned RMSE columns.
    #[arg(long, value_name = "FILE")]
    network: Option<PathBuf>,

    /// Label for the method column.
    #[arg(long, default_value = "predictions", value_name = "NAME")]
    label: String,

    /// Output metrics CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VariogramArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Time point.
    #[arg(long, value_name = "T")]
    t: i64,

    /// Number of distance bins.
    #[arg(long, default_value_t = 15, value_name = "N")]
    bins: usize,

    /// Which values to bin: y (sensor readings) or x-ref.
    #[arg(long, default_value = "y", value_name = "FIELD")]
    field: String,

    /// Output CSV (distance,semivariance,pairs).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parse arguments, run, and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Globals {
    config: RunConfig,
    seed: u64,
    threads: usize,
}

fn env_parse<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
    match std::env::var(name) {
        Ok(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| usage(format!("cannot parse {name}={v:?}"))),
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    let seed = env_parse::<u64>("AIRCAL_SEED")?
        .or(config.seed)
        .or(cli.seed)
        .unwrap_or(0);
    let threads = env_parse::<usize>("AIRCAL_THREADS")?
        .or(config.threads)
        .or(cli.threads)
        .unwrap_or(1)
        .max(1);
    let g = Globals {
        config,
        seed,
        threads,
    };
    match cli.command {
        Command::FitObs(a) => cmd_fit_regression(a, &g, false),
        Command::FitRegcal(a) => cmd_fit_regression(a, &g, true),
        Command::FitPareto(a) => cmd_fit_pareto(a, &g),
        Command::Calibrate(a) => cmd_calibrate(a, &g),
        Command::PredictGrid(a) => cmd_predict_grid(a, &g),
        Command::Simulate(a) => cmd_simulate(a, &g),
        Command::Metrics(a) => cmd_metrics(a, &g),
        Command::Variogram(a) => cmd_variogram(a, &g),
    }
}

// ---------------------------------------------------------------------------
// flag/config resolution

fn pick_path(from_config: &Option<String>, flag: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    from_config
        .as_ref()
        .map(PathBuf::from)
        .or_else(|| flag.clone())
        .ok_or_else(|| usage(format!("{name} is required (flag or config file)")))
}

fn parse_window(s: &str) -> CliResult<Window> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("cannot parse window {s:?}; expected t0:t1"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let t0 = parts[0].trim().parse::<i64>().map_err(|_| bad())?;
    let t1 = parts[1].trim().parse::<i64>().map_err(|_| bad())?;
    Ok(Window::new(t0, t1)?)
}

fn resolve_window(g: &Globals, flag: &Option<String>) -> CliResult<Option<Window>> {
    if let Some(w) = &g.config.window {
        return Ok(Some(Window::new(w.t0, w.t1)?));
    }
    flag.as_deref().map(parse_window).transpose()
}

/// The window actually used when none was requested: every observed time.
fn full_window(panel: &PanelDataset) -> Result<Window> {
    let mut times = panel.times();
    let Some(first) = times.next() else {
        return Err(Error::InvalidInput("no observations".to_string()));
    };
    let (lo, hi) = times.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
    Window::new(lo, hi + 1)
}

fn resolve_schema(g: &Globals, covariates: &[String], offset_only: &[String]) -> CliResult<CovariateSchema> {
    let names: Vec<String> = match &g.config.covariates {
        Some(c) => c.clone(),
        None => covariates.to_vec(),
    };
    let interacts: Vec<bool> = match (&g.config.covariates, &g.config.interacting) {
        (Some(_), Some(flags)) => flags.clone(),
        _ => {
            for off in offset_only {
                if !names.contains(off) {
                    return Err(usage(format!(
                        "--offset-only covariate {off:?} is not in --covariates"
                    )));
                }
            }
            names.iter().map(|n| !offset_only.contains(n)).collect()
        }
    };
    Ok(CovariateSchema::new(names, interacts)?)
}

fn resolve_family(g: &Globals, flag: &Option<String>) -> CliResult<KernelFamily> {
    if let Some(f) = g.config.family {
        return Ok(f);
    }
    match flag {
        None => Ok(KernelFamily::Exponential),
        Some(s) => KernelFamily::parse(s)
            .ok_or_else(|| usage(format!("unknown covariance family {s:?}"))),
    }
}

fn resolve_mle(g: &Globals, spatial: &SpatialArgs) -> CliResult<MleConfig> {
    Ok(MleConfig {
        family: resolve_family(g, &spatial.family)?,
        fit_nugget: g.config.fit_nugget.unwrap_or(spatial.fit_nugget),
        fixed_phi: g.config.fixed_phi.or(spatial.fixed_phi),
    })
}

fn resolve_mcmc(g: &Globals, args: &McmcArgs, family: KernelFamily) -> CliResult<crate::bayes::McmcConfig> {
    let mut mc = g.config.mcmc.clone().unwrap_or_default();
    if g.config.mcmc.is_none() {
        if let Some(n) = args.mcmc_iters {
            mc.n_iter = n;
        }
        if let Some(n) = args.mcmc_burn {
            mc.n_burn = n;
        }
    }
    mc.family = family;
    mc.seed = g.seed;
    Ok(mc)
}

fn resolve_method(g: &Globals, flag: &Option<String>, fallback: Method) -> CliResult<Method> {
    if let Some(m) = g.config.method {
        return Ok(m);
    }
    match flag {
        None => Ok(fallback),
        Some(s) => Ok(s.parse::<Method>()?),
    }
}

fn load_panel(
    g: &Globals,
    data: &DataArgs,
    schema: Option<&CovariateSchema>,
) -> CliResult<(NetworkLayout, PanelDataset)> {
    let network = pick_path(&g.config.network, &data.network, "--network")?;
    let observations = pick_path(&g.config.observations, &data.observations, "--observations")?;
    let layout = read_network_csv(&network)?;
    let panel = read_observations_csv(&observations, schema)?;
    panel.validate_roles(&layout)?;
    Ok((layout, panel))
}

fn sorted_times(panel: &PanelDataset, window: Option<Window>) -> Vec<i64> {
    let mut times: Vec<i64> = panel
        .times()
        .filter(|t| window.map_or(true, |w| w.contains(*t)))
        .collect();
    times.sort_unstable();
    times.dedup();
    times
}

// ---------------------------------------------------------------------------
// fit commands

fn cmd_fit_regression(a: FitArgs, g: &Globals, forward: bool) -> CliResult<()> {
    let schema = resolve_schema(g, &a.covariates, &a.offset_only)?;
    let (layout, panel) = load_panel(g, &a.data, None)?;
    let window = match resolve_window(g, &a.window)? {
        Some(w) => w,
        None => full_window(&panel)?,
    };
    let out = pick_path(&g.config.model, &a.out, "--out")?;
    let model = if forward {
        ModelFile::Regcal(fit_regression_calibration(&panel, &layout, window, &schema)?)
    } else {
        ModelFile::Observation(fit_inverse_regression(&panel, &layout, window, &schema)?)
    };
    write_model_json(&out, &model)?;
    eprintln!("wrote {} model to {}", model.kind(), out.display());
    Ok(())
}

fn cmd_fit_pareto(a: FitParetoArgs, g: &Globals) -> CliResult<()> {
    let schema = resolve_schema(g, &a.fit.covariates, &a.fit.offset_only)?;
    let (layout, panel) = load_panel(g, &a.fit.data, None)?;
    let window = match resolve_window(g, &a.fit.window)? {
        Some(w) => w,
        None => full_window(&panel)?,
    };
    let threshold = g.config.threshold.or(a.threshold).unwrap_or(12.0);
    let out = pick_path(&g.config.model, &a.fit.out, "--out")?;
    let fit = fit_pareto(&panel, &layout, window, &schema, threshold, g.seed)?;
    write_model_json(&out, &ModelFile::Pareto(fit))?;
    eprintln!("wrote pareto model to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

fn cmd_calibrate(a: CalibrateArgs, g: &Globals) -> CliResult<()> {
    let model_path = pick_path(&g.config.model, &a.model, "--model")?;
    let out = pick_path(&g.config.output, &a.out, "--out")?;
    let model = read_model_json(&model_path)?;
    let fallback = match &model {
        ModelFile::Observation(_) => Method::GpFilter,
        ModelFile::Regcal(_) => Method::RegCal,
        ModelFile::Pareto(_) => Method::Pareto,
    };
    let method = resolve_method(g, &a.method, fallback)?;
    let window = resolve_window(g, &a.window)?;

    let rows = match (&model, method) {
        (ModelFile::Observation(fit), Method::GpFilter) => {
            let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
            let fcfg = FilterConfig {
                mle: resolve_mle(g, &a.spatial)?,
                params_override: None,
            };
            let mut rows = Vec::new();
            for t in sorted_times(&panel, window) {
                let slice = build_time_slice(&panel, &layout, t)?;
                if slice.n_b() == 0 {
                    eprintln!("t={t}: no sensor readings, skipped");
                    continue;
                }
                let (res, params) = filter_slice(&slice, fit, &fcfg)?;
                let anchor = predict_grid(&params, &slice, &res, &slice.ref_locs)?;
                for i in 0..slice.n_ref() {
                    let sd = anchor.var[i].max(0.0).sqrt();
                    rows.push(CalibrationRow {
                        site_id: slice.ref_ids[i].clone(),
                        t,
                        xhat: anchor.mean[i],
                        sd: Some(sd),
                        lower: Some(anchor.mean[i] - 1.96 * sd),
                        upper: Some(anchor.mean[i] + 1.96 * sd),
                        stable: true,
                    });
                }
                let sd = res.sd();
                let (lo, hi) = res.bounds();
                for i in 0..slice.n_b() {
                    rows.push(CalibrationRow {
                        site_id: slice.b_ids[i].clone(),
                        t,
                        xhat: res.mean[i],
                        sd: Some(sd[i]),
                        lower: Some(lo[i]),
                        upper: Some(hi[i]),
                        stable: res.stable[i],
                    });
                }
            }
            rows
        }
        (ModelFile::Observation(fit), Method::GpFilterBayes) => {
            let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
            let family = resolve_family(g, &a.spatial.family)?;
            let mcfg = resolve_mcmc(g, &a.mcmc, family)?;
            let mut rows = Vec::new();
            for t in sorted_times(&panel, window) {
                let slice = build_time_slice(&panel, &layout, t)?;
                if slice.n_b() == 0 {
                    eprintln!("t={t}: no sensor readings, skipped");
                    continue;
                }
                let priors = PriorSpec::default_for(&slice, fit)?;
                let draws = mcmc_filter_time_point(fit, &slice, &priors, &mcfg)?;
                for w in &draws.warnings {
                    eprintln!("t={t}: {w}");
                }
                let summary = summarize_posterior(&draws, 0.95)?;
                let anchor = grid_posterior(
                    &draws,
                    &slice,
                    family,
                    &slice.ref_locs,
                    0.95,
                    g.seed.wrapping_add(1),
                )?;
                for i in 0..slice.n_ref() {
                    rows.push(CalibrationRow {
                        site_id: slice.ref_ids[i].clone(),
                        t,
                        xhat: anchor.mean[i],
                        sd: Some(anchor.var[i].max(0.0).sqrt()),
                        lower: Some(anchor.lower[i]),
                        upper: Some(anchor.upper[i]),
                        stable: true,
                    });
                }
                let sd = summary.sd();
                let (lo, hi) = summary.bounds();
                for i in 0..slice.n_b() {
                    rows.push(CalibrationRow {
                        site_id: slice.b_ids[i].clone(),
                        t,
                        xhat: summary.mean[i],
                        sd: Some(sd[i]),
                        lower: Some(lo[i]),
                        upper: Some(hi[i]),
                        stable: summary.stable[i],
                    });
                }
            }
            rows
        }
        (ModelFile::Observation(fit), Method::Inverse) => {
            let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
            sensor_rows(&panel, &layout, window, |y, z| {
                let gain = fit.gain(z);
                Ok(CalRow {
                    xhat: (y - fit.offset(z)) / gain,
                    sd: None,
                    bounds: None,
                    stable: gain.abs() >= EPS_GAIN,
                })
            })?
        }
        (ModelFile::Regcal(fit), Method::RegCal) => {
            let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
            sensor_rows(&panel, &layout, window, |y, z| {
                let (xhat, var) = predict_regcal(fit, y, z)?;
                let sd = var.max(0.0).sqrt();
                Ok(CalRow {
                    xhat,
                    sd: Some(sd),
                    bounds: Some((xhat - 1.96 * sd, xhat + 1.96 * sd)),
                    stable: true,
                })
            })?
        }
        (ModelFile::Pareto(fit), Method::Pareto) => {
            let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
            sensor_rows(&panel, &layout, window, |y, z| {
                Ok(CalRow {
                    xhat: predict_pareto(fit, y, z)?,
                    sd: None,
                    bounds: None,
                    stable: true,
                })
            })?
        }
        (model, method) => {
            return Err(usage(format!(
                "model file holds a {} model, which cannot drive method {}",
                model.kind(),
                method.label()
            )));
        }
    };

    write_calibration_csv(&out, &rows)?;
    eprintln!("wrote {} calibrated rows to {}", rows.len(), out.display());
    Ok(())
}

struct CalRow {
    xhat: f64,
    sd: Option<f64>,
    bounds: Option<(f64, f64)>,
    stable: bool,
}

/// Per-record calibration for the non-spatial methods: every sensor reading
/// in the window, in file order.
fn sensor_rows(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Option<Window>,
    mut predict: impl FnMut(f64, &[f64]) -> Result<CalRow>,
) -> Result<Vec<CalibrationRow>> {
    let mut rows = Vec::new();
    for r in panel.records() {
        if let Some(w) = window {
            if !w.contains(r.t) {
                continue;
            }
        }
        let site = layout
            .get(&r.site_id)
            .expect("roles were validated against the layout");
        if site.role != SiteRole::LowCostOnly && site.role != SiteRole::Collocated {
            continue;
        }
        let Some(y) = r.y else { continue };
        let p = predict(y, &r.covariates)?;
        rows.push(CalibrationRow {
            site_id: r.site_id.clone(),
            t: r.t,
            xhat: p.xhat,
            sd: p.sd,
            lower: p.bounds.map(|b| b.0),
            upper: p.bounds.map(|b| b.1),
            stable: p.stable,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// predict-grid

fn cmd_predict_grid(a: PredictGridArgs, g: &Globals) -> CliResult<()> {
    let model_path = pick_path(&g.config.model, &a.model, "--model")?;
    let out = pick_path(&g.config.output, &a.out, "--out")?;
    let ModelFile::Observation(fit) = read_model_json(&model_path)? else {
        return Err(usage(
            "predict-grid needs an observation model (from fit-obs)".to_string(),
        ));
    };
    let method = resolve_method(g, &a.method, Method::GpFilter)?;
    let (layout, panel) = load_panel(g, &a.data, Some(&fit.schema))?;
    let window = resolve_window(g, &a.window)?;

    let grid_locs: Vec<Location> = match &a.grid {
        Some(p) => read_grid_points(p)?,
        None => match g.config.grid.as_ref() {
            Some(p) => read_grid_points(Path::new(p))?,
            None => layout.grid_locations(),
        },
    };
    if grid_locs.is_empty() {
        return Err(usage(
            "no grid points: pass --grid or add D-role sites to the network",
        ));
    }

    let mut rows = Vec::new();
    match method {
        Method::GpFilter => {
            let fcfg = FilterConfig {
                mle: resolve_mle(g, &a.spatial)?,
                params_override: None,
            };
            for t in sorted_times(&panel, window) {
                let slice = build_time_slice(&panel, &layout, t)?;
                if slice.n_b() == 0 {
                    eprintln!("t={t}: no sensor readings, skipped");
                    continue;
                }
                let (res, params) = filter_slice(&slice, &fit, &fcfg)?;
                let pred = predict_grid(&params, &slice, &res, &grid_locs)?;
                push_grid_rows(&mut rows, &grid_locs, t, &pred.mean, &pred.var, None);
            }
        }
        Method::GpFilterBayes => {
            let family = resolve_family(g, &a.spatial.family)?;
            let mcfg = resolve_mcmc(g, &a.mcmc, family)?;
            for t in sorted_times(&panel, window) {
                let slice = build_time_slice(&panel, &layout, t)?;
                if slice.n_b() == 0 {
                    eprintln!("t={t}: no sensor readings, skipped");
                    continue;
                }
                let priors = PriorSpec::default_for(&slice, &fit)?;
                let draws = mcmc_filter_time_point(&fit, &slice, &priors, &mcfg)?;
                for w in &draws.warnings {
                    eprintln!("t={t}: {w}");
                }
                let pred = grid_posterior(
                    &draws,
                    &slice,
                    family,
                    &grid_locs,
                    0.95,
                    g.seed.wrapping_add(1),
                )?;
                push_grid_rows(
                    &mut rows,
                    &grid_locs,
                    t,
                    &pred.mean,
                    &pred.var,
                    Some((&pred.lower, &pred.upper)),
                );
            }
        }
        other => {
            return Err(usage(format!(
                "predict-grid supports gpfilter-freq and gpfilter-bayes, not {}",
                other.label()
            )));
        }
    }

    write_grid_csv(&out, &rows)?;
    eprintln!("wrote {} grid rows to {}", rows.len(), out.display());
    Ok(())
}

fn push_grid_rows(
    rows: &mut Vec<GridRow>,
    locs: &[Location],
    t: i64,
    mean: &DVector<f64>,
    var: &DVector<f64>,
    bounds: Option<(&DVector<f64>, &DVector<f64>)>,
) {
    for (i, loc) in locs.iter().enumerate() {
        let sd = var[i].max(0.0).sqrt();
        let (lower, upper) = match bounds {
            Some((lo, hi)) => (lo[i], hi[i]),
            None => (mean[i] - 1.96 * sd, mean[i] + 1.96 * sd),
        };
        rows.push(GridRow {
            x: loc.x,
            y: loc.y,
            t,
            mean: mean[i],
            sd,
            lower,
            upper,
        });
    }
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(a: SimulateArgs, g: &Globals) -> CliResult<()> {
    let out = pick_path(&g.config.output, &a.out, "--out")?;
    let scenario: Scenario = a.scenario.parse()?;
    let sigma2 = a.sigma2.unwrap_or(15.0);
    let mut cfg = match a.profile.as_str() {
        "desk" => ScenarioConfig::desk(scenario, sigma2, g.seed),
        "paper" => ScenarioConfig::paper(scenario, sigma2, g.seed),
        other => return Err(usage(format!("unknown profile {other:?}; desk or paper"))),
    };
    if let Some(n) = a.replicates {
        cfg.n_replicates = n;
    }
    if let Some(n) = a.train {
        cfg.n_train = n;
    }
    if let Some(n) = a.test {
        cfg.n_test = n;
    }
    if let Some(n) = a.sensors {
        cfg.n_lowcost = n;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.tau2 {
        cfg.tau2 = v;
    }
    cfg.mcmc = g.config.mcmc.clone();

    let methods: Vec<Method> = a
        .methods
        .iter()
        .map(|s| s.parse::<Method>())
        .collect::<Result<_>>()?;

    let report = run_scenario(&cfg, &methods, g.threads)?;
    for (rep, err) in &report.failed {
        eprintln!("replicate {rep} failed: {err}");
    }
    for mr in &report.reports {
        match &mr.metrics {
            Some(m) => eprintln!(
                "{}: rmse {:.4} over {} points in {:.1} s",
                mr.method.label(),
                m.rmse_overall,
                m.n_points,
                m.runtime_seconds
            ),
            None => eprintln!("{}: every replicate failed", mr.method.label()),
        }
    }
    write_metrics_csv(&out, &metrics_rows(&report))?;
    eprintln!("wrote metrics to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics

fn cmd_metrics(a: MetricsArgs, g: &Globals) -> CliResult<()> {
    let pred_path = pick_path(&g.config.output, &a.pred, "--pred")?;
    let truth_path = pick_path(&g.config.observations, &a.truth, "--truth")?;
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let pred = read_calibration_csv(&pred_path)?;
    let truth_panel = read_observations_csv(&truth_path, None)?;

    let mut truth_map = std::collections::HashMap::new();
    for r in truth_panel.records() {
        if let Some(x) = r.x_ref {
            truth_map.insert((r.site_id.as_str(), r.t), x);
        }
    }

    let layout = match (&g.config.network, &a.network) {
        (Some(p), _) => Some(read_network_csv(Path::new(p))?),
        (None, Some(p)) => Some(read_network_csv(p)?),
        (None, None) => None,
    };
    let ref_locs: Vec<Location> = layout
        .as_ref()
        .map(|l| l.reference_sites().iter().map(|s| s.loc).collect())
        .unwrap_or_default();

    let mut xhat = Vec::new();
    let mut x = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut dists = Vec::new();
    let mut skipped = 0usize;
    for row in &pred {
        let Some(&truth) = truth_map.get(&(row.site_id.as_str(), row.t)) else {
            skipped += 1;
            continue;
        };
        xhat.push(row.xhat);
        x.push(truth);
        if let (Some(lo), Some(hi)) = (row.lower, row.upper) {
            lower.push(lo);
            upper.push(hi);
        }
        if let Some(l) = &layout {
            let site = l.get(&row.site_id).ok_or_else(|| {
                Error::InvalidInput(format!("site {:?} is not in the network file", row.site_id))
            })?;
            let d = ref_locs
                .iter()
                .map(|r| site.loc.distance(r))
                .fold(f64::INFINITY, f64::min);
            dists.push(d);
        }
    }
    if skipped > 0 {
        eprintln!("{skipped} predicted rows had no truth value and were skipped");
    }

    let intervals = (lower.len() == xhat.len() && !xhat.is_empty())
        .then(|| (lower.as_slice(), upper.as_slice()));
    let distances = (!dists.is_empty()).then(|| dists.as_slice());
    let report = compute_metrics(&xhat, &x, intervals, distances)?;
    eprintln!(
        "{}: rmse {:.4} over {} points",
        a.label, report.rmse_overall, report.n_points
    );
    write_metrics_csv(
        &out,
        &[MetricsRow {
            method: a.label,
            report,
            base_rmse_overall: None,
            rmse_change_pct: None,
            fnr_change_pct: None,
        }],
    )?;
    eprintln!("wrote metrics to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// variogram

fn cmd_variogram(a: VariogramArgs, g: &Globals) -> CliResult<()> {
    let out = pick_path(&g.config.output, &a.out, "--out")?;
    let (layout, panel) = load_panel(g, &a.data, None)?;
    let mut locs = Vec::new();
    let mut vals = Vec::new();
    for r in panel.records_at(a.t) {
        let site = layout
            .get(&r.site_id)
            .expect("roles were validated against the layout");
        let v = match a.field.as_str() {
            "y" => r.y,
            "x-ref" | "xref" => r.x_ref,
            other => return Err(usage(format!("unknown field {other:?}; y or x-ref"))),
        };
        if let Some(v) = v {
            locs.push(site.loc);
            vals.push(v);
        }
    }
    if locs.is_empty() {
        return Err(CliError::Lib(Error::InvalidInput(format!(
            "no {} values at t={}",
            a.field, a.t
        ))));
    }
    let bins = empirical_variogram(&locs, &vals, a.bins)?;
    write_variogram_csv(&out, &bins)?;
    eprintln!("wrote {} bins to {}", bins.len(), out.display());
    Ok(())
}
