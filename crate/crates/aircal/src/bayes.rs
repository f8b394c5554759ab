//! The Bayesian spatial filter: instead of plugging in one maximum-likelihood
//! estimate of (µ, σ², φ, nugget), sample them jointly with the latent
//! concentrations by Markov chain Monte Carlo, so parameter uncertainty
//! reaches the calibrated values and their intervals.
//!
//! The sampler is Metropolis-within-Gibbs. The latent field x_B given
//! everything else is exactly Gaussian (the same gain-form update the plug-in
//! filter uses), so that block is drawn exactly; the spatial parameters move
//! by a block random-walk on (µ, log σ², log φ, log nugget) with the step
//! scale adapted toward 30% acceptance during burn-in. The observation-model
//! coefficients stay plugged in throughout.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::calib::ObsModelFit;
use crate::covariance::{cholesky_with_jitter, cov_matrix, KernelFamily, KernelSpec};
use crate::error::{Error, MixingWarning, Result};
use crate::filter::{
    filter_time_point, median_distance, pairwise_distances, transform_observations,
    CredibleIntervals, FilterDiagnostics, FilterResult, ParamPosterior, SpatialParams,
};
use crate::geo::{Location, TimeSlice};

const LN_2PI: f64 = 1.8378770664093453;

/// Prior for one spatial parameter. Scale parameters (σ and √nugget) take
/// their priors on the standard-deviation scale; `Fixed` pins the parameter
/// on that same scale and removes it from the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamPrior {
    Fixed(f64),
    Normal { mean: f64, sd: f64 },
    HalfNormal { scale: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ParamPrior {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            ParamPrior::Fixed(v) => v.is_finite(),
            ParamPrior::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            ParamPrior::HalfNormal { scale } => scale > 0.0,
            ParamPrior::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid prior for {name}")))
        }
    }

    fn fixed_value(&self) -> Option<f64> {
        match *self {
            ParamPrior::Fixed(v) => Some(v),
            _ => None,
        }
    }

    /// Unnormalized log-density on the parameter's natural scale.
    fn log_density(&self, v: f64) -> f64 {
        match *self {
            ParamPrior::Fixed(_) => 0.0,
            ParamPrior::Normal { mean, sd } => -0.5 * ((v - mean) / sd).powi(2),
            ParamPrior::HalfNormal { scale } => {
                if v < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -0.5 * (v / scale).powi(2)
                }
            }
            ParamPrior::Uniform { lo, hi } => {
                if v < lo || v > hi {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
        }
    }

}

/// Priors for the per-time-point spatial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// Prior on the mean µ_t.
    pub mu: ParamPrior,
    /// Prior on σ = √σ² (partial sill on the sd scale).
    pub sigma: ParamPrior,
    /// Prior on the decay rate φ.
    pub phi: ParamPrior,
    /// Prior on √nugget; `Fixed(0.0)` turns the nugget off.
    pub sqrt_nugget: ParamPrior,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.mu.validate("mu")?;
        self.sigma.validate("sigma")?;
        self.phi.validate("phi")?;
        self.sqrt_nugget.validate("sqrt_nugget")
    }

    /// Weakly informative, data-scaled defaults:
    /// µ ~ Normal(mean of reference values, 100²),
    /// σ ~ half-Normal(5 · sd of the stable inverted estimates),
    /// φ ~ Uniform(0.1·3/maxdist, 10·3/mindist),
    /// √nugget ~ half-Normal(sd of the stable inverted estimates).
    pub fn default_for(slice: &TimeSlice, fit: &ObsModelFit) -> Result<PriorSpec> {
        let inv = transform_observations(slice, fit)?;
        let stable: Vec<f64> = (0..slice.n_b())
            .filter(|&i| inv.stable[i])
            .map(|i| inv.xhat[i])
            .collect();
        let sd = sample_sd(&stable).max(1e-3);

        let mut locs: Vec<Location> = slice.ref_locs.clone();
        locs.extend_from_slice(&slice.b_locs);
        let dists = pairwise_distances(&locs);
        let max_d = dists.iter().copied().fold(0.0_f64, f64::max);
        let min_d = dists
            .iter()
            .copied()
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !(max_d > 0.0) || !min_d.is_finite() {
            return Err(Error::InvalidInput(
                "need at least two distinct locations for default priors".to_string(),
            ));
        }

        let spec = PriorSpec {
            mu: ParamPrior::Normal {
                mean: slice.x_ref.mean(),
                sd: 100.0,
            },
            sigma: ParamPrior::HalfNormal { scale: 5.0 * sd },
            phi: ParamPrior::Uniform {
                lo: 0.1 * 3.0 / max_d,
                hi: 10.0 * 3.0 / min_d,
            },
            sqrt_nugget: ParamPrior::HalfNormal { scale: sd },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Chain settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    pub family: KernelFamily,
    /// Per-coordinate proposal steps for (µ, log σ², log φ, log nugget);
    /// `None` uses built-in defaults. A global factor on top of these is
    /// adapted during burn-in when `adapt` is set.
    pub step_scales: Option<Vec<f64>>,
    pub adapt: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 4000,
            n_burn: 2000,
            thin: 1,
            seed: 0,
            family: KernelFamily::Exponential,
            step_scales: None,
            adapt: true,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::InvalidInput(format!(
                "n_burn {} must be below n_iter {}",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Retained draws from one per-time-point chain.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub t: i64,
    pub site_ids: Vec<String>,
    /// Latent concentrations, one row per retained draw.
    pub x_b: DMatrix<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub phi: Vec<f64>,
    pub nugget: Vec<f64>,
    /// Parameter-block acceptance rate after burn-in; `None` when every
    /// parameter was pinned by a point-mass prior.
    pub acceptance: Option<f64>,
    pub warnings: Vec<MixingWarning>,
    /// Initial inversion, kept for summaries and diagnostics.
    pub xhat: DVector<f64>,
    pub stable: Vec<bool>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.x_b.nrows()
    }
}

/// Which sampler coordinate a free parameter occupies.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    Mu,
    LogSigma2,
    LogPhi,
    LogNugget,
}

impl Coord {
    fn default_step(self) -> f64 {
        match self {
            Coord::Mu => 0.5,
            Coord::LogSigma2 => 0.3,
            Coord::LogPhi => 0.3,
            Coord::LogNugget => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NaturalParams {
    mu: f64,
    sigma2: f64,
    phi: f64,
    nugget: f64,
}

impl NaturalParams {
    fn spatial(&self, family: KernelFamily) -> Result<SpatialParams> {
        Ok(SpatialParams {
            mu: self.mu,
            kernel: KernelSpec::new(family, self.sigma2, self.phi, self.nugget)?,
        })
    }
}

/// Log prior density in sampler coordinates: natural-scale priors plus the
/// Jacobians of the log transforms (σ and √nugget priors live on the sd
/// scale, so their Jacobians are ln σ and ln √nugget).
fn log_prior_eta(priors: &PriorSpec, nat: &NaturalParams, free: &[Coord]) -> f64 {
    let mut lp = 0.0;
    for &c in free {
        lp += match c {
            Coord::Mu => priors.mu.log_density(nat.mu),
            Coord::LogSigma2 => {
                let sigma = nat.sigma2.sqrt();
                priors.sigma.log_density(sigma) + sigma.ln()
            }
            Coord::LogPhi => priors.phi.log_density(nat.phi) + nat.phi.ln(),
            Coord::LogNugget => {
                let s = nat.nugget.sqrt();
                priors.sqrt_nugget.log_density(s) + s.ln()
            }
        };
    }
    lp
}

fn nat_from_eta(eta: &[f64], free: &[Coord], base: &NaturalParams) -> NaturalParams {
    let mut nat = *base;
    for (k, &c) in free.iter().enumerate() {
        match c {
            Coord::Mu => nat.mu = eta[k],
            Coord::LogSigma2 => nat.sigma2 = eta[k].exp(),
            Coord::LogPhi => nat.phi = eta[k].exp(),
            Coord::LogNugget => nat.nugget = eta[k].exp(),
        }
    }
    nat
}

fn eta_from_nat(nat: &NaturalParams, free: &[Coord]) -> Vec<f64> {
    free.iter()
        .map(|&c| match c {
            Coord::Mu => nat.mu,
            Coord::LogSigma2 => nat.sigma2.ln(),
            Coord::LogPhi => nat.phi.ln(),
            Coord::LogNugget => nat.nugget.ln(),
        })
        .collect()
}

/// Cached per-parameter machinery: the joint field covariance factor for the
/// Metropolis likelihood and the exact Gaussian block for x_B.
struct ParamMachinery {
    /// Cholesky of the covariance over reference + sensor sites.
    chol_all: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    logdet_all: f64,
    /// Exact conditional N(mean, cov) of x_B given data and parameters.
    post_mean: DVector<f64>,
    post_factor: DMatrix<f64>,
}

fn build_machinery(
    nat: &NaturalParams,
    family: KernelFamily,
    slice: &TimeSlice,
    fit: &ObsModelFit,
    all_locs: &[Location],
) -> Result<ParamMachinery> {
    let params = nat.spatial(family)?;
    let c_all = cov_matrix(&params.kernel, all_locs, all_locs);
    let jc = cholesky_with_jitter(&c_all, params.kernel.sigma2)?;
    let logdet_all: f64 = 2.0 * jc.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    let res = filter_time_point(slice, fit, &params)?;
    let post_jc = cholesky_with_jitter(
        &res.post_cov,
        res.post_cov.diagonal().amax().max(f64::MIN_POSITIVE),
    )?;
    Ok(ParamMachinery {
        chol_all: jc.chol,
        logdet_all,
        post_mean: res.mean,
        post_factor: post_jc.chol.l(),
    })
}

/// Gaussian log-density of the stacked field values under the cached factor.
fn field_loglik(m: &ParamMachinery, mu: f64, vals: &DVector<f64>) -> f64 {
    let centered = vals.map(|v| v - mu);
    let quad = centered.dot(&m.chol_all.solve(&centered));
    -0.5 * (vals.len() as f64 * LN_2PI + m.logdet_all + quad)
}

/// Run one per-time-point chain.
///
/// Reproducible from (data, priors, cfg): the RNG is a counter-based
/// generator seeded by `cfg.seed` with the stream set to the slice's time
/// index, so chains for different time points can run concurrently without
/// changing any draw.
pub fn mcmc_filter_time_point(
    fit: &ObsModelFit,
    slice: &TimeSlice,
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws> {
    priors.validate()?;
    cfg.validate()?;

    let inv = transform_observations(slice, fit)?;
    let mut all_locs = slice.ref_locs.clone();
    all_locs.extend_from_slice(&slice.b_locs);
    let n_all = all_locs.len();
    let n_b = slice.n_b();

    // free coordinates in fixed order
    let mut free: Vec<Coord> = Vec::new();
    if priors.mu.fixed_value().is_none() {
        free.push(Coord::Mu);
    }
    if priors.sigma.fixed_value().is_none() {
        free.push(Coord::LogSigma2);
    }
    if priors.phi.fixed_value().is_none() {
        free.push(Coord::LogPhi);
    }
    if priors.sqrt_nugget.fixed_value().is_none() {
        free.push(Coord::LogNugget);
    }

    // deterministic moment-based starting point, respecting pins
    let stable_xhat: Vec<f64> = (0..n_b)
        .filter(|&i| inv.stable[i])
        .map(|i| inv.xhat[i])
        .collect();
    let sd0 = sample_sd(&stable_xhat).max(1e-3);
    let med = median_distance(&all_locs).filter(|d| *d > 0.0).ok_or_else(|| {
        Error::InvalidInput("chain needs at least two distinct locations".to_string())
    })?;
    let mut nat = NaturalParams {
        mu: priors
            .mu
            .fixed_value()
            .unwrap_or_else(|| slice.x_ref.mean()),
        sigma2: match priors.sigma.fixed_value() {
            Some(s) => s * s,
            None => (sd0 * sd0).max(1e-6),
        },
        phi: priors.phi.fixed_value().unwrap_or(3.0 / med),
        nugget: match priors.sqrt_nugget.fixed_value() {
            Some(s) => s * s,
            None => 0.01 * sd0 * sd0,
        },
    };
    if let ParamPrior::Uniform { lo, hi } = priors.phi {
        nat.phi = nat.phi.clamp(lo, hi);
    }

    let steps: Vec<f64> = match &cfg.step_scales {
        Some(s) => {
            if s.len() != free.len() {
                return Err(Error::InvalidInput(format!(
                    "{} step scales for {} free parameters",
                    s.len(),
                    free.len()
                )));
            }
            s.clone()
        }
        None => free.iter().map(|c| c.default_step()).collect(),
    };

    let mut machinery = build_machinery(&nat, cfg.family, slice, fit, &all_locs)?;
    let mut lp_prior = log_prior_eta(priors, &nat, &free);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(slice.t as u64);

    let kept = (cfg.n_iter - cfg.n_burn).div_ceil(cfg.thin);
    let mut x_draws = DMatrix::zeros(kept, n_b);
    let mut mu_draws = Vec::with_capacity(kept);
    let mut s2_draws = Vec::with_capacity(kept);
    let mut phi_draws = Vec::with_capacity(kept);
    let mut nug_draws = Vec::with_capacity(kept);

    let mut vals = DVector::zeros(n_all);
    vals.rows_mut(0, slice.n_ref()).copy_from(&slice.x_ref);

    let mut scale_global = 1.0_f64;
    let mut window_accepts = 0usize;
    let mut window_count = 0usize;
    let mut post_accepts = 0usize;
    let mut post_proposals = 0usize;
    let mut row = 0usize;

    for iter in 0..cfg.n_iter {
        // (a) exact Gaussian draw of the latent field
        let z = DVector::from_fn(n_b, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x_b = &machinery.post_mean + &machinery.post_factor * z;
        vals.rows_mut(slice.n_ref(), n_b).copy_from(&x_b);

        // (b) block random-walk Metropolis on the free parameters
        if !free.is_empty() {
            let eta = eta_from_nat(&nat, &free);
            let eta_prop: Vec<f64> = eta
                .iter()
                .zip(&steps)
                .map(|(e, s)| e + scale_global * s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let nat_prop = nat_from_eta(&eta_prop, &free, &nat);
            let lp_prop = log_prior_eta(priors, &nat_prop, &free);

            let mut accepted = false;
            if lp_prop > f64::NEG_INFINITY {
                if let Ok(mach_prop) =
                    build_machinery(&nat_prop, cfg.family, slice, fit, &all_locs)
                {
                    let ll_prop = field_loglik(&mach_prop, nat_prop.mu, &vals);
                    let ll_cur = field_loglik(&machinery, nat.mu, &vals);
                    let log_ratio = ll_prop + lp_prop - ll_cur - lp_prior;
                    if log_ratio >= 0.0 || rng.gen_range(0.0..1.0_f64).ln() < log_ratio {
                        nat = nat_prop;
                        machinery = mach_prop;
                        lp_prior = lp_prop;
                        accepted = true;
                    }
                }
            }

            if iter < cfg.n_burn {
                window_accepts += usize::from(accepted);
                window_count += 1;
                if cfg.adapt && window_count == 50 {
                    let rate = window_accepts as f64 / 50.0;
                    if rate > 0.35 {
                        scale_global *= 1.1;
                    } else if rate < 0.25 {
                        scale_global /= 1.1;
                    }
                    window_accepts = 0;
                    window_count = 0;
                }
            } else {
                post_accepts += usize::from(accepted);
                post_proposals += 1;
            }
        }

        if iter >= cfg.n_burn && (iter - cfg.n_burn) % cfg.thin == 0 {
            x_draws.row_mut(row).copy_from(&x_b.transpose());
            mu_draws.push(nat.mu);
            s2_draws.push(nat.sigma2);
            phi_draws.push(nat.phi);
            nug_draws.push(nat.nugget);
            row += 1;
        }
    }
    debug_assert_eq!(row, kept);

    let acceptance = (post_proposals > 0).then(|| post_accepts as f64 / post_proposals as f64);
    let mut warnings = Vec::new();
    if let Some(rate) = acceptance {
        if rate <= 0.05 || rate >= 0.95 {
            warnings.push(MixingWarning {
                target: "spatial-params".to_string(),
                acceptance: rate,
            });
        }
    }

    Ok(PosteriorDraws {
        t: slice.t,
        site_ids: slice.b_ids.clone(),
        x_b: x_draws,
        mu: mu_draws,
        sigma2: s2_draws,
        phi: phi_draws,
        nugget: nug_draws,
        acceptance,
        warnings,
        xhat: inv.xhat,
        stable: inv.stable,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn moments(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = sample_sd(v);
    (mean, sd)
}

/// Posterior mean/covariance and equal-tailed credible intervals per sensor
/// site, packaged as a [`FilterResult`] so downstream prediction and output
/// code handles both filters uniformly.
pub fn summarize_posterior(draws: &PosteriorDraws, level: f64) -> Result<FilterResult> {
    let k = draws.n_draws();
    if k < 100 {
        return Err(Error::InvalidInput(format!(
            "posterior summary needs at least 100 retained draws, got {k}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "credible level {level} outside (0,1)"
        )));
    }
    let n_b = draws.x_b.ncols();
    let kf = k as f64;

    let mean = DVector::from_fn(n_b, |j, _| draws.x_b.column(j).mean());
    let mut centered = draws.x_b.clone();
    for j in 0..n_b {
        let mj = mean[j];
        centered.column_mut(j).apply(|v| *v -= mj);
    }
    let post_cov = centered.transpose() * &centered / (kf - 1.0);

    let alpha = (1.0 - level) / 2.0;
    let mut lower = DVector::zeros(n_b);
    let mut upper = DVector::zeros(n_b);
    for j in 0..n_b {
        let mut col: Vec<f64> = draws.x_b.column(j).iter().copied().collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower[j] = quantile(&col, alpha);
        upper[j] = quantile(&col, 1.0 - alpha);
    }

    let n_unstable = draws.stable.iter().filter(|&&s| !s).count();
    Ok(FilterResult {
        t: draws.t,
        site_ids: draws.site_ids.clone(),
        mean,
        post_cov,
        prior_mean: None,
        xhat: draws.xhat.clone(),
        stable: draws.stable.clone(),
        intervals: Some(CredibleIntervals {
            level,
            lower,
            upper,
        }),
        param_posterior: Some(ParamPosterior {
            mu: moments(&draws.mu),
            sigma2: moments(&draws.sigma2),
            phi: moments(&draws.phi),
            nugget: moments(&draws.nugget),
        }),
        diagnostics: FilterDiagnostics {
            n_unstable,
            jitter_escalations: 0,
            mle_converged: true,
        },
    })
}

/// Posterior field prediction at arbitrary locations.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub level: f64,
}

/// Krige every retained draw onto `grid_locs` and pool.
///
/// Per draw, the grid field given (x_ref, x_B^(k)) under (µ^(k), θ^(k)) is
/// Gaussian with a kriging mean and a diagonal variance (grid sites treated
/// independently, matching the per-site prediction the plug-in filter
/// makes). The pooled mean and variance use the exact per-draw moments (law
/// of total variance); interval endpoints come from one sampled field value
/// per draw, which is what the diagonal sampling is for.
pub fn grid_posterior(
    draws: &PosteriorDraws,
    slice: &TimeSlice,
    family: KernelFamily,
    grid_locs: &[Location],
    level: f64,
    seed: u64,
) -> Result<GridPosterior> {
    if grid_locs.is_empty() {
        return Err(Error::InvalidInput("empty prediction grid".to_string()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "credible level {level} outside (0,1)"
        )));
    }
    let k = draws.n_draws();
    if k == 0 {
        return Err(Error::InvalidInput("no retained draws".to_string()));
    }
    let n_ref = slice.n_ref();
    let n_b = slice.n_b();
    let n_all = n_ref + n_b;
    let n_g = grid_locs.len();

    let mut data_locs = slice.ref_locs.clone();
    data_locs.extend_from_slice(&slice.b_locs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draws.t as u64);

    let mut mean_acc = DVector::<f64>::zeros(n_g);
    let mut var_within_acc = DVector::<f64>::zeros(n_g);
    let mut mean_sq_acc = DVector::<f64>::zeros(n_g);
    let mut samples = DMatrix::zeros(k, n_g);

    let mut vals = DVector::zeros(n_all);
    vals.rows_mut(0, n_ref).copy_from(&slice.x_ref);

    for d in 0..k {
        let kernel = KernelSpec::new(family, draws.sigma2[d], draws.phi[d], draws.nugget[d])?;
        let mu = draws.mu[d];
        for j in 0..n_b {
            vals[n_ref + j] = draws.x_b[(d, j)];
        }
        let c_dd = cov_matrix(&kernel, &data_locs, &data_locs);
        let jc = cholesky_with_jitter(&c_dd, kernel.sigma2)?;
        let c_gd = cov_matrix(&kernel, grid_locs, &data_locs);
        let centered = vals.map(|v| v - mu);
        let m = DVector::from_element(n_g, mu) + &c_gd * jc.chol.solve(&centered);
        let weights = jc.chol.solve(&c_gd.transpose());
        let sill = kernel.sill();
        for i in 0..n_g {
            let v = (sill - c_gd.row(i).dot(&weights.column(i).transpose())).max(0.0);
            mean_acc[i] += m[i];
            mean_sq_acc[i] += m[i] * m[i];
            var_within_acc[i] += v;
            samples[(d, i)] = m[i] + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let kf = k as f64;
    let mean = mean_acc / kf;
    let mut var = DVector::zeros(n_g);
    for i in 0..n_g {
        let between = (mean_sq_acc[i] / kf - mean[i] * mean[i]).max(0.0);
        var[i] = var_within_acc[i] / kf + between;
    }

    let alpha = (1.0 - level) / 2.0;
    let mut lower = DVector::zeros(n_g);
    let mut upper = DVector::zeros(n_g);
    for i in 0..n_g {
        let mut col: Vec<f64> = samples.column(i).iter().copied().collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower[i] = quantile(&col, alpha);
        upper[i] = quantile(&col, 1.0 - alpha);
    }

    Ok(GridPosterior {
        mean,
        var,
        lower,
        upper,
        level,
    })
}

/// Posterior-predictive checks: how extreme is each observed reading under
/// the fitted model?
///
/// One comparison reading per sensor site is drawn from Normal(µ̄, τ²) with
/// µ̄ built from the posterior-mean field, then compared against the observed
/// reading across all draws:
/// p = (1/K) Σₖ 1{ |y_sample − µ^(k)| > |y_obs − µ^(k)| }.
/// Values near 0 mean the observation is more extreme than the model can
/// explain. Raw p-values, no multiplicity correction.
pub fn posterior_predictive_pvalues(
    draws: &PosteriorDraws,
    fit: &ObsModelFit,
    slice: &TimeSlice,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = draws.n_draws();
    if k == 0 {
        return Err(Error::InvalidInput("no retained draws".to_string()));
    }
    let inv = transform_observations(slice, fit)?;
    let n_b = slice.n_b();
    let tau = fit.tau2.max(0.0).sqrt();

    let x_mean = DVector::from_fn(n_b, |j, _| draws.x_b.column(j).mean());
    let mu_bar = &inv.offsets + inv.gains.component_mul(&x_mean);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draws.t as u64);
    let y_sample = DVector::from_fn(n_b, |i, _| {
        mu_bar[i] + tau * rng.sample::<f64, _>(StandardNormal)
    });

    let mut counts = vec![0usize; n_b];
    for d in 0..k {
        for i in 0..n_b {
            let mu_d = inv.offsets[i] + inv.gains[i] * draws.x_b[(d, i)];
            if (y_sample[i] - mu_d).abs() > (slice.y_b[i] - mu_d).abs() {
                counts[i] += 1;
            }
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / k as f64).collect())
}
