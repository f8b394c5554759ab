//! Scenario execution: per-replicate generation, model training, held-out
//! prediction with every requested method, and deterministic aggregation.
//!
//! Replicates are independent down to the random number stream, so they can
//! run on any number of threads and produce the identical report; a
//! replicate that fails (say, a degenerate fit on an unlucky draw) is
//! recorded in the report rather than aborting the run.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::{mcmc_filter_time_point, summarize_posterior, PriorSpec};
use crate::calib::{
    fit_obs_no_collocation, fit_pareto_records, fit_records_inverse, fit_regcal_no_collocation,
    fit_regcal_records, predict_pareto, predict_regcal, CovariateSchema, ObsModelFit,
    TrainingRecord,
};
use crate::covariance::{KernelFamily, KernelSpec};
use crate::error::{Error, Result};
use crate::filter::{filter_slice, transform_observations, FilterConfig, MleConfig};
use crate::geo::{
    Location, NetworkLayout, PanelDataset, PanelRecord, Site, SiteRole, TimeSlice, Window,
};

use super::metrics::{pearson, Kahan};
use super::{
    average_reports, compute_metrics, simulate_covariates, simulate_gp_truth, simulate_lowcost,
    simulate_pointsource_truth, GenCoefficients, MetricsReport, Scenario, ScenarioConfig,
    AQI_MODERATE, COVARIATE_NAMES,
};

/// Sensors this close to an added reference site count as "near" in the
/// network-design study.
pub const NEAR_REFERENCE_RADIUS: f64 = 0.1;

/// Expanded designs for the network studies: 1 → 5 reference sites,
/// 50 → 200 sensors.
const EXPANDED_REFS: usize = 5;
const EXPANDED_SENSORS: usize = 200;

/// Pilot slices used to estimate a shared decay rate in the large-network
/// study, where a free per-time optimization would dominate the runtime.
const PHI_PILOT_SLICES: usize = 10;

const MAX_AUGMENT_ATTEMPTS: usize = 1000;

/// A calibration method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Frequentist spatial filter: per-time plug-in spatial fit plus the
    /// gain-form measurement update.
    #[serde(rename = "gpfilter-freq")]
    GpFilter,
    /// Same filter with the spatial parameters sampled instead of plugged
    /// in.
    #[serde(rename = "gpfilter-bayes")]
    GpFilterBayes,
    /// Forward regression of truth on readings (the usual baseline).
    #[serde(rename = "regcal")]
    RegCal,
    /// Raw inversion of the observation model, no spatial pooling.
    #[serde(rename = "inverse")]
    Inverse,
    /// Threshold-exceedance model; passes sub-threshold readings through.
    #[serde(rename = "pareto")]
    Pareto,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::GpFilter,
        Method::GpFilterBayes,
        Method::RegCal,
        Method::Inverse,
        Method::Pareto,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::GpFilter => "gpfilter-freq",
            Method::GpFilterBayes => "gpfilter-bayes",
            Method::RegCal => "regcal",
            Method::Inverse => "inverse",
            Method::Pareto => "pareto",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.label() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown method {s:?}; expected one of gpfilter-freq, \
                     gpfilter-bayes, regcal, inverse, pareto"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One method's aggregate scores. The design-study scenarios fill in the
/// base-design comparison; everything else leaves it empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// Averaged over successful replicates; absent if every replicate
    /// failed.
    pub metrics: Option<MetricsReport>,
    /// The un-expanded network, scored on the same evaluation sites.
    pub base_design: Option<MetricsReport>,
    /// Relative RMSE change (%) of the expanded design against the base.
    pub rmse_change_pct: Option<f64>,
    /// Relative false-negative-rate change (%).
    pub fnr_change_pct: Option<f64>,
}

/// Everything `run_scenario` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub sigma2: f64,
    pub reports: Vec<MethodReport>,
    /// Generation coefficients, surfaced so recovery can be asserted.
    pub coefficients: GenCoefficients,
    pub n_replicates: usize,
    /// (replicate index, error) for quarantined replicates.
    pub failed: Vec<(usize, String)>,
}

struct ReplicateOutcome {
    primary: Vec<MetricsReport>,
    base: Option<Vec<MetricsReport>>,
}

/// Generated data for one replicate: reference-capable sites first, then
/// sensor sites, with truth and readings for all of them.
struct SimData {
    locs: Vec<Location>,
    truth: DMatrix<f64>,
    y: DMatrix<f64>,
    covs: DMatrix<f64>,
    sources: Option<[Location; 2]>,
}

/// Seeds drawn once per replicate so that base and expanded designs of the
/// network studies see the same randomness.
#[derive(Clone, Copy)]
struct EvalSeeds {
    pareto_fit: u64,
    augment: u64,
    mcmc: u64,
}

impl EvalSeeds {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        EvalSeeds {
            pareto_fit: rng.gen(),
            augment: rng.gen(),
            mcmc: rng.gen(),
        }
    }
}

fn generate(
    cfg: &ScenarioConfig,
    n_ref: usize,
    n_sensor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimData> {
    let n_sites = n_ref + n_sensor;
    let locs: Vec<Location> = (0..n_sites)
        .map(|_| Location::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    let n_times = cfg.n_train + cfg.n_test;
    let truth_seed: u64 = rng.gen();
    let cov_seed: u64 = rng.gen();
    let y_seed: u64 = rng.gen();

    let (truth, sources) = match cfg.scenario {
        Scenario::S3PointSource => {
            let field = simulate_pointsource_truth(&locs, cfg.gamma, n_times, truth_seed)?;
            (field.truth, Some(field.sources))
        }
        _ => {
            let spec = KernelSpec::new(KernelFamily::Exponential, cfg.sigma2, cfg.phi, 0.0)?;
            (
                simulate_gp_truth(&locs, &spec, cfg.mu, n_times, truth_seed)?,
                None,
            )
        }
    };
    let covs = simulate_covariates(n_times, cov_seed);
    let y = if cfg.generate_with_covariates() {
        simulate_lowcost(&truth, &covs, &cfg.coefficients, cfg.tau2, y_seed)?
    } else {
        simulate_lowcost(
            &truth,
            &DMatrix::zeros(n_times, 0),
            &cfg.coefficients.without_covariates(),
            cfg.tau2,
            y_seed,
        )?
    };
    Ok(SimData {
        locs,
        truth,
        y,
        covs,
        sources,
    })
}

fn fitting_schema(cfg: &ScenarioConfig) -> Result<CovariateSchema> {
    if cfg.fit_with_covariates() {
        CovariateSchema::all_interacting(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect())
    } else {
        Ok(CovariateSchema::empty())
    }
}

fn covariate_row(data: &SimData, t: usize, q: usize) -> Vec<f64> {
    (0..q).map(|j| data.covs[(t, j)]).collect()
}

fn training_records(
    cfg: &ScenarioConfig,
    data: &SimData,
    ref_idx: &[usize],
    q: usize,
) -> Vec<TrainingRecord> {
    let mut out = Vec::with_capacity(ref_idx.len() * cfg.n_train);
    for &a in ref_idx {
        for t in 0..cfg.n_train {
            out.push(TrainingRecord {
                y: data.y[(t, a)],
                x: data.truth[(t, a)],
                z: covariate_row(data, t, q),
            });
        }
    }
    out
}

/// Redraw one moderate truth value from the generating distribution, or
/// `None` if the rejection loop exhausts its budget (possible at plume
/// sites that never reach the threshold).
fn draw_moderate(
    cfg: &ScenarioConfig,
    site: &Location,
    sources: Option<&[Location; 2]>,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let sigma = cfg.sigma2.sqrt();
    for _ in 0..MAX_AUGMENT_ATTEMPTS {
        let cand = match sources {
            Some(src) => {
                let p = (rng.gen_range(2.0..9.0), rng.gen_range(2.0..9.0));
                super::point_source_value(site, src, p, cfg.gamma)
            }
            None => cfg.mu + sigma * rng.sample::<f64, _>(StandardNormal),
        };
        if cand > AQI_MODERATE {
            return Some(cand);
        }
    }
    None
}

/// Training set for the exceedance model: records whose truth already
/// exceeds the threshold are kept; every other record is regenerated with a
/// moderate truth value and a consistent reading, so the model trains on as
/// many rows as the others do.
fn pareto_training_records(
    cfg: &ScenarioConfig,
    data: &SimData,
    ref_idx: &[usize],
    q: usize,
    seed: u64,
) -> Vec<TrainingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = cfg.tau2.sqrt();
    let gen_coeffs = if cfg.generate_with_covariates() {
        cfg.coefficients.clone()
    } else {
        cfg.coefficients.without_covariates()
    };
    let gen_q = gen_coeffs.beta2.len();

    let mut out = Vec::with_capacity(ref_idx.len() * cfg.n_train);
    for &a in ref_idx {
        for t in 0..cfg.n_train {
            let x0 = data.truth[(t, a)];
            if x0 > AQI_MODERATE {
                out.push(TrainingRecord {
                    y: data.y[(t, a)],
                    x: x0,
                    z: covariate_row(data, t, q),
                });
                continue;
            }
            match draw_moderate(cfg, &data.locs[a], data.sources.as_ref(), &mut rng) {
                Some(x_new) => {
                    let z_gen = covariate_row(data, t, gen_q);
                    let y_new = gen_coeffs.mean(x_new, &z_gen)
                        + tau * rng.sample::<f64, _>(StandardNormal);
                    out.push(TrainingRecord {
                        y: y_new,
                        x: x_new,
                        z: covariate_row(data, t, q),
                    });
                }
                None => out.push(TrainingRecord {
                    y: data.y[(t, a)],
                    x: x0,
                    z: covariate_row(data, t, q),
                }),
            }
        }
    }
    out
}

fn make_slice(
    data: &SimData,
    ref_idx: &[usize],
    sensor_idx: &[usize],
    t: usize,
    q: usize,
) -> TimeSlice {
    let n_b = sensor_idx.len();
    TimeSlice {
        t: t as i64,
        ref_ids: ref_idx.iter().map(|r| format!("a{r}")).collect(),
        ref_locs: ref_idx.iter().map(|&r| data.locs[r]).collect(),
        x_ref: DVector::from_fn(ref_idx.len(), |k, _| data.truth[(t, ref_idx[k])]),
        b_ids: sensor_idx.iter().map(|s| format!("b{s}")).collect(),
        b_locs: sensor_idx.iter().map(|&s| data.locs[s]).collect(),
        y_b: DVector::from_fn(n_b, |k, _| data.y[(t, sensor_idx[k])]),
        z_b: DMatrix::from_fn(n_b, q, |_, j| data.covs[(t, j)]),
    }
}

/// Filter configuration for a design: per-time optimization everywhere
/// except the large-sensor study, which pins the decay rate to a pilot
/// median so the per-time fit only has to search variance and nugget.
fn filter_config_for(
    cfg: &ScenarioConfig,
    data: &SimData,
    ref_idx: &[usize],
    sensor_idx: &[usize],
    obs_fit: &ObsModelFit,
    q: usize,
) -> FilterConfig {
    if cfg.scenario != Scenario::S1bSensors {
        return FilterConfig::default();
    }
    let mut phis: Vec<f64> = Vec::new();
    for j in 0..cfg.n_test.min(PHI_PILOT_SLICES) {
        let slice = make_slice(data, ref_idx, sensor_idx, cfg.n_train + j, q);
        if let Ok((_, params)) = filter_slice(&slice, obs_fit, &FilterConfig::default()) {
            phis.push(params.kernel.phi);
        }
    }
    if phis.is_empty() {
        return FilterConfig::default();
    }
    phis.sort_by(|a, b| a.total_cmp(b));
    FilterConfig {
        mle: MleConfig {
            family: KernelFamily::Exponential,
            fit_nugget: true,
            fixed_phi: Some(phis[phis.len() / 2]),
        },
        params_override: None,
    }
}

struct MethodAcc {
    pred: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    has_intervals: bool,
    seconds: f64,
}

/// Train every requested method on the design's collocated pairs and score
/// it on the held-out slices, restricted to `eval_idx`.
fn evaluate_design(
    cfg: &ScenarioConfig,
    methods: &[Method],
    data: &SimData,
    ref_idx: &[usize],
    sensor_idx: &[usize],
    eval_idx: &[usize],
    seeds: EvalSeeds,
) -> Result<Vec<MetricsReport>> {
    let schema = fitting_schema(cfg)?;
    let q = schema.q();
    let window = Window::new(0, cfg.n_train as i64)?;
    let records = training_records(cfg, data, ref_idx, q);

    let needs_obs = methods.iter().any(|m| {
        matches!(
            m,
            Method::GpFilter | Method::GpFilterBayes | Method::Inverse
        )
    });
    let mut obs_fit = None;
    let mut obs_seconds = 0.0;
    if needs_obs {
        let t0 = Instant::now();
        obs_fit = Some(fit_records_inverse(&records, &schema, window)?);
        obs_seconds = t0.elapsed().as_secs_f64();
    }
    let mut regcal_fit = None;
    let mut regcal_seconds = 0.0;
    if methods.contains(&Method::RegCal) {
        let t0 = Instant::now();
        regcal_fit = Some(fit_regcal_records(&records, &schema, window)?);
        regcal_seconds = t0.elapsed().as_secs_f64();
    }
    let mut pareto_fit = None;
    let mut pareto_seconds = 0.0;
    if methods.contains(&Method::Pareto) {
        let aug = pareto_training_records(cfg, data, ref_idx, q, seeds.augment);
        let t0 = Instant::now();
        pareto_fit = Some(fit_pareto_records(
            &aug,
            &schema,
            AQI_MODERATE,
            seeds.pareto_fit,
        )?);
        pareto_seconds = t0.elapsed().as_secs_f64();
    }

    let fcfg = match &obs_fit {
        Some(fit) => filter_config_for(cfg, data, ref_idx, sensor_idx, fit, q),
        None => FilterConfig::default(),
    };
    let mut mcmc_cfg = cfg.mcmc.clone().unwrap_or_default();
    mcmc_cfg.seed = seeds.mcmc;

    // positions of the evaluation sites inside the design's sensor vector
    let eval_pos: Vec<usize> = eval_idx
        .iter()
        .map(|e| {
            sensor_idx
                .iter()
                .position(|s| s == e)
                .expect("evaluation sites are part of the design")
        })
        .collect();
    let eval_dist: Vec<f64> = eval_idx
        .iter()
        .map(|&e| {
            ref_idx
                .iter()
                .map(|&r| data.locs[e].distance(&data.locs[r]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let n_points = cfg.n_test * eval_idx.len();
    let mut truth_flat = Vec::with_capacity(n_points);
    let mut dist_flat = Vec::with_capacity(n_points);
    let mut accs: Vec<MethodAcc> = methods
        .iter()
        .map(|m| MethodAcc {
            pred: Vec::with_capacity(n_points),
            lower: Vec::with_capacity(n_points),
            upper: Vec::with_capacity(n_points),
            has_intervals: matches!(
                m,
                Method::GpFilter | Method::GpFilterBayes | Method::RegCal
            ),
            seconds: 0.0,
        })
        .collect();

    for j in 0..cfg.n_test {
        let t = cfg.n_train + j;
        let slice = make_slice(data, ref_idx, sensor_idx, t, q);
        let z = covariate_row(data, t, q);
        for (k, &e) in eval_idx.iter().enumerate() {
            truth_flat.push(data.truth[(t, e)]);
            dist_flat.push(eval_dist[k]);
        }

        for (mi, m) in methods.iter().enumerate() {
            let t0 = Instant::now();
            let acc = &mut accs[mi];
            match m {
                Method::GpFilter => {
                    let (res, _) = filter_slice(&slice, obs_fit.as_ref().unwrap(), &fcfg)?;
                    let sd = res.sd();
                    for &pos in &eval_pos {
                        acc.pred.push(res.mean[pos]);
                        acc.lower.push(res.mean[pos] - 1.96 * sd[pos]);
                        acc.upper.push(res.mean[pos] + 1.96 * sd[pos]);
                    }
                }
                Method::GpFilterBayes => {
                    let obs = obs_fit.as_ref().unwrap();
                    let priors = PriorSpec::default_for(&slice, obs)?;
                    let draws = mcmc_filter_time_point(obs, &slice, &priors, &mcmc_cfg)?;
                    let summary = summarize_posterior(&draws, 0.95)?;
                    let (lo, hi) = summary.bounds();
                    for &pos in &eval_pos {
                        acc.pred.push(summary.mean[pos]);
                        acc.lower.push(lo[pos]);
                        acc.upper.push(hi[pos]);
                    }
                }
                Method::RegCal => {
                    let fit = regcal_fit.as_ref().unwrap();
                    for &pos in &eval_pos {
                        let (xhat, var) = predict_regcal(fit, slice.y_b[pos], &z)?;
                        let half = 1.96 * var.max(0.0).sqrt();
                        acc.pred.push(xhat);
                        acc.lower.push(xhat - half);
                        acc.upper.push(xhat + half);
                    }
                }
                Method::Inverse => {
                    let inv = transform_observations(&slice, obs_fit.as_ref().unwrap())?;
                    for &pos in &eval_pos {
                        acc.pred.push(inv.xhat[pos]);
                    }
                }
                Method::Pareto => {
                    let fit = pareto_fit.as_ref().unwrap();
                    for &pos in &eval_pos {
                        acc.pred.push(predict_pareto(fit, slice.y_b[pos], &z)?);
                    }
                }
            }
            acc.seconds += t0.elapsed().as_secs_f64();
        }
    }

    methods
        .iter()
        .zip(accs)
        .map(|(m, acc)| {
            let intervals = acc
                .has_intervals
                .then(|| (acc.lower.as_slice(), acc.upper.as_slice()));
            let mut report =
                compute_metrics(&acc.pred, &truth_flat, intervals, Some(&dist_flat))?;
            report.runtime_seconds = acc.seconds
                + match m {
                    Method::GpFilter | Method::GpFilterBayes | Method::Inverse => obs_seconds,
                    Method::RegCal => regcal_seconds,
                    Method::Pareto => pareto_seconds,
                };
            Ok(report)
        })
        .collect()
}

fn run_replicate(
    cfg: &ScenarioConfig,
    methods: &[Method],
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate as u64 + 1);

    match cfg.scenario {
        Scenario::S1bRefs => {
            let n_ref = EXPANDED_REFS;
            let data = generate(cfg, n_ref, cfg.n_lowcost, &mut rng)?;
            let seeds = EvalSeeds::draw(&mut rng);
            let sensors: Vec<usize> = (n_ref..n_ref + cfg.n_lowcost).collect();
            // score only sensors near the references the expansion adds
            let eval: Vec<usize> = sensors
                .iter()
                .copied()
                .filter(|&s| {
                    (1..n_ref)
                        .any(|r| data.locs[s].distance(&data.locs[r]) <= NEAR_REFERENCE_RADIUS)
                })
                .collect();
            if eval.is_empty() {
                return Err(Error::InvalidInput(
                    "no sensors fell near the added reference sites".to_string(),
                ));
            }
            let base = evaluate_design(cfg, methods, &data, &[0], &sensors, &eval, seeds)?;
            let expanded_refs: Vec<usize> = (0..n_ref).collect();
            let primary =
                evaluate_design(cfg, methods, &data, &expanded_refs, &sensors, &eval, seeds)?;
            Ok(ReplicateOutcome {
                primary,
                base: Some(base),
            })
        }
        Scenario::S1bSensors => {
            let data = generate(cfg, 1, EXPANDED_SENSORS, &mut rng)?;
            let seeds = EvalSeeds::draw(&mut rng);
            let base_sensors: Vec<usize> = (1..1 + cfg.n_lowcost).collect();
            let all_sensors: Vec<usize> = (1..1 + EXPANDED_SENSORS).collect();
            let base =
                evaluate_design(cfg, methods, &data, &[0], &base_sensors, &base_sensors, seeds)?;
            let primary =
                evaluate_design(cfg, methods, &data, &[0], &all_sensors, &base_sensors, seeds)?;
            Ok(ReplicateOutcome {
                primary,
                base: Some(base),
            })
        }
        _ => {
            let n_ref = cfg.n_collocated.max(1);
            let data = generate(cfg, n_ref, cfg.n_lowcost, &mut rng)?;
            let seeds = EvalSeeds::draw(&mut rng);
            let refs: Vec<usize> = (0..n_ref).collect();
            let sensors: Vec<usize> = (n_ref..n_ref + cfg.n_lowcost).collect();
            let primary =
                evaluate_design(cfg, methods, &data, &refs, &sensors, &sensors, seeds)?;
            Ok(ReplicateOutcome {
                primary,
                base: None,
            })
        }
    }
}

/// Run a scenario over all its replicates and aggregate.
///
/// `threads` caps worker threads; results are identical for any value
/// because each replicate owns an independent random stream and aggregation
/// happens in replicate order.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    methods: &[Method],
    threads: usize,
) -> Result<ScenarioReport> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".to_string()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::InvalidInput(format!(
                "method {} requested twice",
                m.label()
            )));
        }
    }
    if cfg.n_collocated == 0 {
        return Err(Error::InvalidInput(
            "scenarios need at least one collocated site for training".to_string(),
        ));
    }

    let n_rep = cfg.n_replicates;
    let results: Vec<Result<ReplicateOutcome>> = if threads <= 1 {
        (0..n_rep).map(|r| run_replicate(cfg, methods, r)).collect()
    } else {
        let slots: Mutex<Vec<Option<Result<ReplicateOutcome>>>> =
            Mutex::new((0..n_rep).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(n_rep) {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, Ordering::Relaxed);
                    if r >= n_rep {
                        break;
                    }
                    let outcome = run_replicate(cfg, methods, r);
                    slots.lock().unwrap()[r] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|s| s.expect("every replicate ran"))
            .collect()
    };

    let mut failed = Vec::new();
    let mut ok: Vec<ReplicateOutcome> = Vec::with_capacity(n_rep);
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => ok.push(o),
            Err(e) => failed.push((i, e.to_string())),
        }
    }

    let reports = methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let primary: Vec<&MetricsReport> = ok.iter().map(|o| &o.primary[mi]).collect();
            let metrics = average_reports(&primary);
            let base_reports: Vec<&MetricsReport> = ok
                .iter()
                .filter_map(|o| o.base.as_ref().map(|b| &b[mi]))
                .collect();
            let base_design = average_reports(&base_reports);
            let rmse_change_pct = match (&metrics, &base_design) {
                (Some(m), Some(b)) if b.rmse_overall > 0.0 => {
                    Some((m.rmse_overall - b.rmse_overall) / b.rmse_overall * 100.0)
                }
                _ => None,
            };
            let fnr_change_pct = match (&metrics, &base_design) {
                (Some(m), Some(b)) => match (m.fnr, b.fnr) {
                    (Some(a), Some(c)) if c > 0.0 => Some((a - c) / c * 100.0),
                    _ => None,
                },
                _ => None,
            };
            MethodReport {
                method,
                metrics,
                base_design,
                rmse_change_pct,
                fnr_change_pct,
            }
        })
        .collect();

    Ok(ScenarioReport {
        scenario: cfg.scenario,
        sigma2: cfg.sigma2,
        reports,
        coefficients: cfg.coefficients.clone(),
        n_replicates: n_rep,
        failed,
    })
}

/// Residual-truth correlations of the two regression directions on data
/// with independent truth draws (no spatial structure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub n: usize,
    /// Forward calibration: expected clearly negative (peaks get pulled
    /// down, troughs pulled up).
    pub regcal_residual_truth_corr: f64,
    /// Inverted observation model: expected near zero.
    pub inverse_residual_truth_corr: f64,
}

/// Empirical check of the residual-correlation contrast between forward
/// calibration and the inverted observation model.
pub fn run_proposition_suite(
    n: usize,
    sigma2: f64,
    tau2: f64,
    seed: u64,
) -> Result<PropositionReport> {
    if n < 100 {
        return Err(Error::InvalidInput(format!(
            "proposition suite needs at least 100 records, got {n}"
        )));
    }
    if !(sigma2 > 0.0) || !(tau2 > 0.0) {
        return Err(Error::InvalidInput(
            "variances must be positive".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covs = simulate_covariates(n, rng.gen());
    let coeffs = GenCoefficients::default();
    let sigma = sigma2.sqrt();
    let tau = tau2.sqrt();

    let mut records = Vec::with_capacity(n);
    for t in 0..n {
        let x = 7.0 + sigma * rng.sample::<f64, _>(StandardNormal);
        let z: Vec<f64> = (0..4).map(|j| covs[(t, j)]).collect();
        let y = coeffs.mean(x, &z) + tau * rng.sample::<f64, _>(StandardNormal);
        records.push(TrainingRecord { y, x, z });
    }

    let schema =
        CovariateSchema::all_interacting(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect())?;
    let window = Window::new(0, n as i64)?;
    let obs = fit_records_inverse(&records, &schema, window)?;
    let regcal = fit_regcal_records(&records, &schema, window)?;

    let mut truth = Vec::with_capacity(n);
    let mut regcal_resid = Vec::with_capacity(n);
    let mut inverse_resid = Vec::with_capacity(n);
    for r in &records {
        let (xhat, _) = predict_regcal(&regcal, r.y, &r.z)?;
        regcal_resid.push(xhat - r.x);
        inverse_resid.push((r.y - obs.offset(&r.z)) / obs.gain(&r.z) - r.x);
        truth.push(r.x);
    }
    let undefined =
        || Error::InvalidInput("degenerate data: correlation undefined".to_string());
    Ok(PropositionReport {
        n,
        regcal_residual_truth_corr: pearson(&regcal_resid, &truth).ok_or_else(undefined)?,
        inverse_residual_truth_corr: pearson(&inverse_resid, &truth).ok_or_else(undefined)?,
    })
}

/// Collocated against no-collocation training, same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoCollocationReport {
    /// Gain ratio (kriged fit over collocated fit) per replicate.
    pub attenuation_ratios: Vec<f64>,
    /// Fraction of replicates with ratio below 1.
    pub fraction_attenuated: f64,
    pub gp_filter_rmse_collocated: f64,
    pub gp_filter_rmse_no_collocation: f64,
    pub regcal_rmse_collocated: f64,
    pub regcal_rmse_no_collocation: f64,
    pub failed: Vec<(usize, String)>,
}

struct NoCollocationArm {
    ratio: f64,
    gp_c: f64,
    gp_nc: f64,
    reg_c: f64,
    reg_nc: f64,
}

fn no_collocation_replicate(
    cfg: &ScenarioConfig,
    replicate: usize,
) -> Result<NoCollocationArm> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate as u64 + 1);
    let data = generate(cfg, 1, cfg.n_lowcost, &mut rng)?;

    let schema = fitting_schema(cfg)?;
    let q = schema.q();
    let window = Window::new(0, cfg.n_train as i64)?;

    // collocated fits use the direct pairs at the reference location
    let records = training_records(cfg, &data, &[0], q);
    let obs_c = fit_records_inverse(&records, &schema, window)?;
    let reg_c = fit_regcal_records(&records, &schema, window)?;

    // the no-collocation variant sees the same world, but the reference
    // site has no sensor: pseudo-pairs come from kriging the readings
    let mut sites = vec![Site {
        id: "c0".to_string(),
        loc: data.locs[0],
        role: SiteRole::ReferenceOnly,
    }];
    let mut panel_records = Vec::with_capacity((cfg.n_lowcost + 1) * cfg.n_train);
    for t in 0..cfg.n_train {
        panel_records.push(PanelRecord {
            site_id: "c0".to_string(),
            t: t as i64,
            y: None,
            x_ref: Some(data.truth[(t, 0)]),
            covariates: covariate_row(&data, t, 4),
        });
    }
    for s in 0..cfg.n_lowcost {
        let site_idx = 1 + s;
        sites.push(Site {
            id: format!("b{s}"),
            loc: data.locs[site_idx],
            role: SiteRole::LowCostOnly,
        });
        for t in 0..cfg.n_train {
            panel_records.push(PanelRecord {
                site_id: format!("b{s}"),
                t: t as i64,
                y: Some(data.y[(t, site_idx)]),
                x_ref: None,
                covariates: covariate_row(&data, t, 4),
            });
        }
    }
    let layout = NetworkLayout::new(sites)?;
    let panel = PanelDataset::new(
        COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        panel_records,
    )?;
    let mle = MleConfig::default();
    let obs_nc = fit_obs_no_collocation(&panel, &layout, window, &schema, &mle)?;
    let reg_nc = fit_regcal_no_collocation(&panel, &layout, window, &schema, &mle)?;

    let ratio = obs_nc.beta1 / obs_c.beta1;

    let sensors: Vec<usize> = (1..1 + cfg.n_lowcost).collect();
    let fcfg = FilterConfig::default();
    let mut sq = [Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default()];
    let mut n_pts = 0usize;
    for j in 0..cfg.n_test {
        let t = cfg.n_train + j;
        let slice = make_slice(&data, &[0], &sensors, t, q);
        let z = covariate_row(&data, t, q);
        let gp_c = filter_slice(&slice, &obs_c, &fcfg)?.0;
        let gp_nc = filter_slice(&slice, &obs_nc, &fcfg)?.0;
        for (pos, &site_idx) in sensors.iter().enumerate() {
            let truth = data.truth[(t, site_idx)];
            let e0 = gp_c.mean[pos] - truth;
            let e1 = gp_nc.mean[pos] - truth;
            let e2 = predict_regcal(&reg_c, slice.y_b[pos], &z)?.0 - truth;
            let e3 = predict_regcal(&reg_nc, slice.y_b[pos], &z)?.0 - truth;
            sq[0].add(e0 * e0);
            sq[1].add(e1 * e1);
            sq[2].add(e2 * e2);
            sq[3].add(e3 * e3);
            n_pts += 1;
        }
    }
    let nf = n_pts as f64;
    Ok(NoCollocationArm {
        ratio,
        gp_c: (sq[0].total() / nf).sqrt(),
        gp_nc: (sq[1].total() / nf).sqrt(),
        reg_c: (sq[2].total() / nf).sqrt(),
        reg_nc: (sq[3].total() / nf).sqrt(),
    })
}

/// Train with and without a sensor at the reference site and compare the
/// fitted gains and the downstream accuracy of both calibration methods.
pub fn run_no_collocation_study(cfg: &ScenarioConfig) -> Result<NoCollocationReport> {
    cfg.validate()?;
    let mut ratios = Vec::new();
    let mut failed = Vec::new();
    let mut sums = [Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default()];
    for r in 0..cfg.n_replicates {
        match no_collocation_replicate(cfg, r) {
            Ok(arm) => {
                ratios.push(arm.ratio);
                sums[0].add(arm.gp_c);
                sums[1].add(arm.gp_nc);
                sums[2].add(arm.reg_c);
                sums[3].add(arm.reg_nc);
            }
            Err(e) => failed.push((r, e.to_string())),
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every replicate failed; first error: {}",
            failed
                .first()
                .map(|(_, e)| e.as_str())
                .unwrap_or("none recorded")
        )));
    }
    let nf = ratios.len() as f64;
    Ok(NoCollocationReport {
        fraction_attenuated: ratios.iter().filter(|r| **r < 1.0).count() as f64 / nf,
        attenuation_ratios: ratios,
        gp_filter_rmse_collocated: sums[0].total() / nf,
        gp_filter_rmse_no_collocation: sums[1].total() / nf,
        regcal_rmse_collocated: sums[2].total() / nf,
        regcal_rmse_no_collocation: sums[3].total() / nf,
        failed,
    })
}
