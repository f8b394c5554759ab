//! The spatial filter. One time point goes through three steps: invert the
//! per-site calibration to get initial concentration estimates, fit (or
//! reuse) spatial covariance parameters by maximum likelihood, then combine
//! the conditional prior given reference sites with the sensor likelihood in
//! a measurement update. Grid prediction extends the filtered field off the
//! monitoring network.

use nalgebra::{DMatrix, DVector};

use crate::calib::{obs_gains, ObsModelFit};
use crate::covariance::{
    cholesky_with_jitter, condition_gaussian, cov_from_distances, cov_matrix, distance_matrix,
    gls_mean, KernelFamily, KernelSpec,
};
use crate::error::{Error, Result};
use crate::geo::{Location, TimeSlice};
use crate::optim::{nelder_mead, SimplexOptions};

const LN_2PI: f64 = 1.8378770664093453;

/// Constant mean plus covariance kernel: everything the spatial prior needs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpatialParams {
    pub mu: f64,
    pub kernel: KernelSpec,
}

/// Controls for the spatial maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub family: KernelFamily,
    /// Add a nugget parameter to the fit (on by default). The per-time fit
    /// runs on inverted sensor readings, which carry the calibration noise;
    /// without a nugget that white component leaks into the variance and
    /// decay estimates instead. [`filter_slice`] treats the fitted nugget as
    /// estimate noise, not field roughness: the conditioning prior keeps only
    /// the smooth component, since the measurement update already accounts
    /// for calibration noise per site.
    pub fit_nugget: bool,
    /// Hold the decay rate fixed instead of estimating it. With the nugget
    /// off this turns the whole fit into a closed form.
    pub fixed_phi: Option<f64>,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            family: KernelFamily::Exponential,
            fit_nugget: true,
            fixed_phi: None,
        }
    }
}

/// A converged spatial fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: SpatialParams,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
}

pub(crate) fn pairwise_distances(locs: &[Location]) -> Vec<f64> {
    let mut out = Vec::with_capacity(locs.len() * (locs.len().saturating_sub(1)) / 2);
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            out.push(locs[i].distance(&locs[j]));
        }
    }
    out
}

pub(crate) fn median_distance(locs: &[Location]) -> Option<f64> {
    let mut d = pairwise_distances(locs);
    if d.is_empty() {
        return None;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    Some(d[d.len() / 2])
}

/// Mean profiled out by GLS, then the Gaussian log-likelihood at that mean.
fn profiled_loglik(c: &DMatrix<f64>, jitter_scale: f64, vals: &DVector<f64>) -> Result<(f64, f64)> {
    let jc = cholesky_with_jitter(c, jitter_scale)?;
    let mu = gls_mean(&jc.chol, vals);
    let centered = vals.map(|v| v - mu);
    let quad = centered.dot(&jc.chol.solve(&centered));
    let logdet: f64 = 2.0 * jc.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = vals.len() as f64;
    Ok((mu, -0.5 * (n * LN_2PI + logdet + quad)))
}

/// Fit (µ, σ², φ[, nugget]) to one spatial sample by maximum likelihood.
///
/// The mean is profiled out in closed form (GLS); the remaining parameters
/// are optimized on the log scale by Nelder-Mead from moment-based starts
/// (sample variance, decay 3/median distance, nugget a tenth of the
/// variance). With `fixed_phi` set and the nugget off no iteration is needed
/// at all: the variance profile is also closed-form.
///
/// A stalled optimizer returns [`Error::MleNotConverged`] carrying its best
/// point so callers can degrade gracefully.
pub fn mle_spatial_params(
    vals: &DVector<f64>,
    locs: &[Location],
    cfg: &MleConfig,
) -> Result<MleFit> {
    mle_with_iteration_cap(vals, locs, cfg, None)
}

pub(crate) fn mle_with_iteration_cap(
    vals: &DVector<f64>,
    locs: &[Location],
    cfg: &MleConfig,
    max_iters: Option<usize>,
) -> Result<MleFit> {
    let n = vals.len();
    if n != locs.len() {
        return Err(Error::InvalidInput(
            "values/locations length mismatch".to_string(),
        ));
    }
    if n < 3 {
        return Err(Error::UnderdeterminedFit { rows: n, cols: 3 });
    }
    let var0 = vals.variance();
    if var0 < 1e-30 {
        return Err(Error::FitDiverged(
            "spatial sample is constant; variance parameters are not identifiable".to_string(),
        ));
    }
    let med = median_distance(locs).filter(|d| *d > 0.0).ok_or_else(|| {
        Error::InvalidInput("spatial sample needs distinct locations".to_string())
    })?;

    let dists = distance_matrix(locs);

    // closed-form path: φ pinned and no nugget means the correlation matrix
    // is fully known, so µ and σ² come straight from GLS formulas
    if let (Some(phi), false) = (cfg.fixed_phi, cfg.fit_nugget) {
        let corr_spec = KernelSpec::new(cfg.family, 1.0, phi, 0.0)?;
        let r = cov_from_distances(&corr_spec, &dists);
        let jc = cholesky_with_jitter(&r, 1.0)?;
        let mu = gls_mean(&jc.chol, vals);
        let centered = vals.map(|v| v - mu);
        let sigma2 = centered.dot(&jc.chol.solve(&centered)) / n as f64;
        if sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(Error::FitDiverged(format!(
                "profiled variance {sigma2} is not usable"
            )));
        }
        let logdet_r: f64 = 2.0 * jc.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let nf = n as f64;
        let loglik = -0.5 * (nf * LN_2PI + nf * sigma2.ln() + logdet_r + nf);
        return Ok(MleFit {
            params: SpatialParams {
                mu,
                kernel: KernelSpec::new(cfg.family, sigma2, phi, 0.0)?,
            },
            loglik,
            iters: 0,
            converged: true,
        });
    }

    let mut x0 = vec![var0.ln()];
    let mut steps = vec![0.5];
    if cfg.fixed_phi.is_none() {
        x0.push((3.0 / med).ln());
        steps.push(0.5);
    }
    if cfg.fit_nugget {
        x0.push((0.1 * var0).ln());
        steps.push(0.5);
    }
    let dim = x0.len();

    let spec_of = |theta: &[f64]| -> Result<KernelSpec> {
        let sigma2 = theta[0].exp();
        let mut k = 1;
        let phi = match cfg.fixed_phi {
            Some(p) => p,
            None => {
                let v = theta[k].exp();
                k += 1;
                v
            }
        };
        let nugget = if cfg.fit_nugget { theta[k].exp() } else { 0.0 };
        KernelSpec::new(cfg.family, sigma2, phi, nugget)
    };

    let objective = |theta: &[f64]| -> f64 {
        let Ok(spec) = spec_of(theta) else {
            return f64::INFINITY;
        };
        let c = cov_from_distances(&spec, &dists);
        match profiled_loglik(&c, spec.sigma2, vals) {
            Ok((_, ll)) => -ll,
            Err(_) => f64::INFINITY,
        }
    };

    let opts = SimplexOptions {
        max_iters: max_iters.unwrap_or(500 * dim),
        ftol_rel: 1e-8,
    };
    let res = nelder_mead(&objective, &x0, &steps, &opts);

    let kernel = spec_of(&res.x)?;
    let c = cov_from_distances(&kernel, &dists);
    let (mu, loglik) = profiled_loglik(&c, kernel.sigma2, vals)?;
    let params = SpatialParams { mu, kernel };
    if !res.converged {
        return Err(Error::MleNotConverged {
            iters: res.iters,
            best: Box::new(params),
            loglik,
        });
    }
    Ok(MleFit {
        params,
        loglik,
        iters: res.iters,
        converged: true,
    })
}

/// Per-site inversion of one time slice.
#[derive(Debug, Clone)]
pub struct InvertedSlice {
    /// Inverted concentration estimates (y − offset) / gain, one per sensor
    /// site. Unstable entries are reported as-is, never clamped.
    pub xhat: DVector<f64>,
    /// Per-site gain magnitude check against [`crate::calib::EPS_GAIN`].
    pub stable: Vec<bool>,
    /// Diagonal of the gain matrix H.
    pub gains: DVector<f64>,
    /// Offsets β₀ + β₂′zᵢ.
    pub offsets: DVector<f64>,
    pub n_unstable: usize,
}

/// Invert the observation model at every sensor site of a slice.
pub fn transform_observations(slice: &TimeSlice, fit: &ObsModelFit) -> Result<InvertedSlice> {
    let gains = obs_gains(fit, &slice.z_b)?;
    let offsets = DVector::from_fn(slice.n_b(), |i, _| {
        let z: Vec<f64> = slice.z_b.row(i).iter().copied().collect();
        fit.offset(&z)
    });
    let mut stable = Vec::with_capacity(slice.n_b());
    let mut xhat = DVector::zeros(slice.n_b());
    for i in 0..slice.n_b() {
        xhat[i] = (slice.y_b[i] - offsets[i]) / gains[i];
        stable.push(gains[i].abs() >= crate::calib::EPS_GAIN);
    }
    let n_unstable = stable.iter().filter(|&&s| !s).count();
    Ok(InvertedSlice {
        xhat,
        stable,
        gains,
        offsets,
        n_unstable,
    })
}

/// Numerical bookkeeping for one filtered time point.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDiagnostics {
    /// Sensor sites whose calibration gain fell below the stability cutoff.
    pub n_unstable: usize,
    /// Total jitter escalations across the conditioning and update solves.
    pub jitter_escalations: usize,
    /// False when the spatial fit stalled and its best point was used anyway.
    pub mle_converged: bool,
}

/// Equal-tailed interval bounds carried alongside a posterior summarized
/// from draws (where mean ± z·sd would misstate the tails).
#[derive(Debug, Clone)]
pub struct CredibleIntervals {
    pub level: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Posterior (mean, sd) pairs for the spatial parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPosterior {
    pub mu: (f64, f64),
    pub sigma2: (f64, f64),
    pub phi: (f64, f64),
    pub nugget: (f64, f64),
}

/// Posterior field at the sensor sites for one time point.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub t: i64,
    /// Sensor site ids, aligned with all vectors below.
    pub site_ids: Vec<String>,
    /// Posterior mean.
    pub mean: DVector<f64>,
    /// Posterior covariance (kept whole; grid prediction needs it).
    pub post_cov: DMatrix<f64>,
    /// Conditional prior mean given the reference sites (plug-in filter
    /// only; a sampled posterior has no single prior mean).
    pub prior_mean: Option<DVector<f64>>,
    /// Raw inverted estimates before any spatial pooling.
    pub xhat: DVector<f64>,
    pub stable: Vec<bool>,
    /// Draw-based interval bounds; `None` means Gaussian mean ± z·sd.
    pub intervals: Option<CredibleIntervals>,
    /// Spatial-parameter posterior attached by the Bayesian filter.
    pub param_posterior: Option<ParamPosterior>,
    pub diagnostics: FilterDiagnostics,
}

impl FilterResult {
    /// Posterior standard deviations (diagonal of the covariance, clamped
    /// against tiny negative rounding).
    pub fn sd(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.post_cov[(i, i)].max(0.0).sqrt()
        })
    }

    /// Interval bounds at the stored level, falling back to the Gaussian
    /// 95% form when no draw-based intervals are attached.
    pub fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        match &self.intervals {
            Some(ci) => (ci.lower.clone(), ci.upper.clone()),
            None => {
                let sd = self.sd();
                (
                    DVector::from_fn(self.mean.len(), |i, _| self.mean[i] - 1.96 * sd[i]),
                    DVector::from_fn(self.mean.len(), |i, _| self.mean[i] + 1.96 * sd[i]),
                )
            }
        }
    }
}

/// One measurement update with fixed spatial parameters.
///
/// The conditional prior (µ̃, Σ) given the reference sites is combined with
/// the sensor likelihood through the gain form
///
/// mean = µ̃ + ΣH (HΣH + τ²I)⁻¹ (u − Hµ̃)
/// cov  = Σ − ΣH (HΣH + τ²I)⁻¹ HΣ
///
/// with u = y − offsets and H the diagonal gain matrix. This form never
/// inverts Σ itself, so a prior made singular by exact reference
/// interpolation still updates cleanly.
pub fn filter_time_point(
    slice: &TimeSlice,
    obs_fit: &ObsModelFit,
    params: &SpatialParams,
) -> Result<FilterResult> {
    let inv = transform_observations(slice, obs_fit)?;
    let cond = condition_gaussian(
        &params.kernel,
        params.mu,
        &slice.b_locs,
        &slice.ref_locs,
        &slice.x_ref,
    )?;

    let n = slice.n_b();
    let u = &slice.y_b - &inv.offsets;
    let resid = &u - inv.gains.component_mul(&cond.mean);

    // ΣH and HΣH share the column/row scaling by the gains
    let mut sigma_h = cond.cov.clone();
    for j in 0..n {
        sigma_h.column_mut(j).scale_mut(inv.gains[j]);
    }
    let mut s = sigma_h.clone();
    for i in 0..n {
        s.row_mut(i).scale_mut(inv.gains[i]);
    }
    for i in 0..n {
        s[(i, i)] += obs_fit.tau2;
    }

    let scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
    let jc = cholesky_with_jitter(&s, scale)?;

    let mean = &cond.mean + &sigma_h * jc.chol.solve(&resid);
    let mut post_cov = &cond.cov - &sigma_h * jc.chol.solve(&sigma_h.transpose());
    let post_cov_t = post_cov.transpose();
    post_cov = (post_cov + post_cov_t) * 0.5;

    Ok(FilterResult {
        t: slice.t,
        site_ids: slice.b_ids.clone(),
        mean,
        post_cov,
        prior_mean: Some(cond.mean),
        xhat: inv.xhat,
        stable: inv.stable,
        intervals: None,
        param_posterior: None,
        diagnostics: FilterDiagnostics {
            n_unstable: inv.n_unstable,
            jitter_escalations: cond.jitter_escalations + jc.escalations,
            mle_converged: true,
        },
    })
}

/// Full filter settings for one run.
#[derive(Debug, Clone, Default)]
pub struct FilterConfig {
    pub mle: MleConfig,
    /// Skip the per-time fit and use these parameters directly.
    pub params_override: Option<SpatialParams>,
}

/// The complete per-time pipeline: invert, fit spatial parameters on the
/// reference values plus the stable inverted estimates, update.
///
/// A nugget estimated here is attributed to the noise in the inverted
/// estimates, which the update step models explicitly, so the parameters
/// passed on (and returned) keep only the smooth component. Callers whose
/// field genuinely has micro-scale variance should say so through
/// `params_override`, which is used verbatim.
///
/// A stalled spatial fit is downgraded to a diagnostic
/// (`mle_converged = false`) and its best point is used.
pub fn filter_slice(
    slice: &TimeSlice,
    obs_fit: &ObsModelFit,
    cfg: &FilterConfig,
) -> Result<(FilterResult, SpatialParams)> {
    let (params, converged) = match &cfg.params_override {
        Some(p) => (p.clone(), true),
        None => {
            let inv = transform_observations(slice, obs_fit)?;
            let mut locs: Vec<Location> = slice.ref_locs.clone();
            let mut vals: Vec<f64> = slice.x_ref.iter().copied().collect();
            for i in 0..slice.n_b() {
                if inv.stable[i] {
                    locs.push(slice.b_locs[i]);
                    vals.push(inv.xhat[i]);
                }
            }
            let (fit, converged) =
                match mle_spatial_params(&DVector::from_vec(vals), &locs, &cfg.mle) {
                    Ok(fit) => (fit.params, true),
                    Err(Error::MleNotConverged { best, .. }) => (*best, false),
                    Err(e) => return Err(e),
                };
            let kernel = KernelSpec::new(
                fit.kernel.family,
                fit.kernel.sigma2,
                fit.kernel.phi,
                0.0,
            )?;
            (
                SpatialParams {
                    mu: fit.mu,
                    kernel,
                },
                converged,
            )
        }
    };
    let mut res = filter_time_point(slice, obs_fit, &params)?;
    res.diagnostics.mle_converged = converged;
    Ok((res, params))
}

/// Field prediction at arbitrary locations for one filtered time point.
#[derive(Debug, Clone)]
pub struct GridPrediction {
    pub mean: DVector<f64>,
    /// Kriging variance plus the propagated posterior covariance of the
    /// filtered sensor values.
    pub var: DVector<f64>,
    pub jitter_escalations: usize,
}

/// Krige the filtered field onto `grid_locs`.
///
/// The conditioning set stacks the reference values (treated as exact) with
/// the filtered posterior means at the sensor sites. The variance adds the
/// kriging variance of that plug-in surface and the propagated filter
/// posterior covariance A₂·PostCov·A₂ᵀ, where A₂ is the block of kriging
/// weights that touches the sensor sites.
pub fn predict_grid(
    params: &SpatialParams,
    slice: &TimeSlice,
    filt: &FilterResult,
    grid_locs: &[Location],
) -> Result<GridPrediction> {
    if filt.mean.len() != slice.n_b() {
        return Err(Error::InvalidInput(
            "filter result does not match slice dimensions".to_string(),
        ));
    }
    let n_ref = slice.n_ref();
    let n_b = slice.n_b();
    let mut data_locs = slice.ref_locs.clone();
    data_locs.extend_from_slice(&slice.b_locs);
    let mut vals = DVector::zeros(n_ref + n_b);
    vals.rows_mut(0, n_ref).copy_from(&slice.x_ref);
    vals.rows_mut(n_ref, n_b).copy_from(&filt.mean);

    let c_dd = cov_matrix(&params.kernel, &data_locs, &data_locs);
    let jc = cholesky_with_jitter(&c_dd, params.kernel.sigma2)?;

    let c_gd = cov_matrix(&params.kernel, grid_locs, &data_locs);
    let centered = vals.map(|v| v - params.mu);
    let mean = DVector::from_element(grid_locs.len(), params.mu) + &c_gd * jc.chol.solve(&centered);

    // kriging weights A = C_gd · C_dd⁻¹, one row per grid point
    let weights = jc.chol.solve(&c_gd.transpose()).transpose();
    let sill = params.kernel.sill();
    let a2 = weights.columns(n_ref, n_b);
    let prop = &a2 * &filt.post_cov; // A₂ · PostCov
    let mut var = DVector::zeros(grid_locs.len());
    for i in 0..grid_locs.len() {
        let krig = sill - c_gd.row(i).dot(&weights.row(i));
        let carried = prop.row(i).dot(&a2.row(i));
        var[i] = (krig + carried).max(0.0);
    }

    Ok(GridPrediction {
        mean,
        var,
        jitter_escalations: jc.escalations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CovariateSchema;
    use crate::covariance::gp_loglik;
    use crate::geo::Window;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_locs(n: usize, rng: &mut ChaCha8Rng) -> Vec<Location> {
        (0..n)
            .map(|_| Location::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect()
    }

    fn gp_sample(spec: &KernelSpec, mu: f64, locs: &[Location], rng: &mut ChaCha8Rng) -> DVector<f64> {
        let c = cov_matrix(spec, locs, locs);
        let l = c.cholesky().expect("simulated covariance is PD").l();
        let z = DVector::from_fn(locs.len(), |_, _| rng.sample(StandardNormal));
        DVector::from_element(locs.len(), mu) + l * z
    }

    /// Observation model y = 2 + 2x + ε with no covariates.
    fn plain_obs_fit(tau2: f64) -> ObsModelFit {
        ObsModelFit {
            beta0: 2.0,
            beta1: 2.0,
            beta2: DVector::zeros(0),
            beta3: DVector::zeros(0),
            tau2,
            schema: CovariateSchema::empty(),
            n_train: 100,
            window: Window::new(0, 100).unwrap(),
            coef_cov: DMatrix::zeros(2, 2),
        }
    }

    fn toy_slice(
        n_ref: usize,
        n_b: usize,
        spec: &KernelSpec,
        mu: f64,
        obs: &ObsModelFit,
        seed: u64,
    ) -> (TimeSlice, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locs = random_locs(n_ref + n_b, &mut rng);
        let x = gp_sample(spec, mu, &locs, &mut rng);
        let tau = obs.tau2.sqrt();
        let y_b = DVector::from_fn(n_b, |i, _| {
            obs.beta0 + obs.beta1 * x[n_ref + i] + tau * rng.sample::<f64, _>(StandardNormal)
        });
        let slice = TimeSlice {
            t: 0,
            ref_ids: (0..n_ref).map(|i| format!("r{i}")).collect(),
            ref_locs: locs[..n_ref].to_vec(),
            x_ref: DVector::from_fn(n_ref, |i, _| x[i]),
            b_ids: (0..n_b).map(|i| format!("b{i}")).collect(),
            b_locs: locs[n_ref..].to_vec(),
            y_b,
            z_b: DMatrix::zeros(n_b, 0),
        };
        let x_b = DVector::from_fn(n_b, |i, _| x[n_ref + i]);
        (slice, x_b)
    }

    #[test]
    fn mle_estimate_dominates_truth_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let locs = random_locs(80, &mut rng);
        let truth = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0).unwrap();
        let vals = gp_sample(&truth, 7.0, &locs, &mut rng);

        let fit = mle_spatial_params(&vals, &locs, &MleConfig::default()).unwrap();
        let ll_hat = gp_loglik(&fit.params.kernel, fit.params.mu, &locs, &vals).unwrap();
        let ll_truth = gp_loglik(&truth, 7.0, &locs, &vals).unwrap();
        assert!(
            ll_hat >= ll_truth - 1e-6,
            "MLE loglik {ll_hat} below truth loglik {ll_truth}"
        );
        // single-realization estimates are noisy; just pin the right ballpark
        assert!(fit.params.mu > 4.0 && fit.params.mu < 10.0, "mu {}", fit.params.mu);
        assert!(
            fit.params.kernel.sigma2 > 2.0 && fit.params.kernel.sigma2 < 50.0,
            "sigma2 {}",
            fit.params.kernel.sigma2
        );
        assert!(
            fit.params.kernel.phi > 0.5 && fit.params.kernel.phi < 30.0,
            "phi {}",
            fit.params.kernel.phi
        );
    }

    #[test]
    fn closed_form_variance_profile_is_a_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let locs = random_locs(40, &mut rng);
        let truth = KernelSpec::new(KernelFamily::Exponential, 8.0, 5.0, 0.0).unwrap();
        let vals = gp_sample(&truth, 7.0, &locs, &mut rng);

        let cfg = MleConfig {
            fixed_phi: Some(5.0),
            ..MleConfig::default()
        };
        let fit = mle_spatial_params(&vals, &locs, &cfg).unwrap();
        assert_eq!(fit.iters, 0);
        let k = fit.params.kernel;
        let ll = gp_loglik(&k, fit.params.mu, &locs, &vals).unwrap();
        assert_relative_eq!(ll, fit.loglik, max_relative = 1e-10);
        for factor in [0.9, 1.1] {
            let perturbed = KernelSpec::new(k.family, k.sigma2 * factor, k.phi, 0.0).unwrap();
            let ll_p = gp_loglik(&perturbed, fit.params.mu, &locs, &vals).unwrap();
            assert!(ll_p < ll, "perturbed variance should lower the likelihood");
        }
    }

    #[test]
    fn stalled_optimizer_reports_its_best_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let locs = random_locs(30, &mut rng);
        let truth = KernelSpec::new(KernelFamily::Exponential, 8.0, 5.0, 0.0).unwrap();
        let vals = gp_sample(&truth, 7.0, &locs, &mut rng);

        let err = mle_with_iteration_cap(&vals, &locs, &MleConfig::default(), Some(2))
            .unwrap_err();
        match err {
            Error::MleNotConverged { iters, best, loglik } => {
                assert!(iters <= 2);
                assert!(loglik.is_finite());
                assert!(best.kernel.sigma2 > 0.0);
            }
            other => panic!("expected MleNotConverged, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        let locs = vec![
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(0.0, 1.0),
        ];
        let constant = DVector::from_element(3, 7.0);
        assert!(matches!(
            mle_spatial_params(&constant, &locs, &MleConfig::default()),
            Err(Error::FitDiverged(_))
        ));

        let two = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            mle_spatial_params(&two, &locs[..2], &MleConfig::default()),
            Err(Error::UnderdeterminedFit { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn inversion_matches_hand_arithmetic() {
        let obs = plain_obs_fit(1.0);
        let slice = TimeSlice {
            t: 3,
            ref_ids: vec!["r0".to_string()],
            ref_locs: vec![Location::new(0.0, 0.0)],
            x_ref: DVector::from_vec(vec![7.0]),
            b_ids: vec!["b0".to_string(), "b1".to_string()],
            b_locs: vec![Location::new(0.3, 0.3), Location::new(0.7, 0.7)],
            y_b: DVector::from_vec(vec![6.0, 8.0]),
            z_b: DMatrix::zeros(2, 0),
        };
        let inv = transform_observations(&slice, &obs).unwrap();
        assert_relative_eq!(inv.xhat[0], 2.0);
        assert_relative_eq!(inv.xhat[1], 3.0);
        assert_eq!(inv.n_unstable, 0);
        assert!(inv.stable.iter().all(|&s| s));
    }

    #[test]
    fn unstable_gain_is_flagged_and_excluded_from_the_spatial_fit() {
        // gain = β₁ + β₃z = 2 − 0.5z vanishes at z = 4
        let schema = CovariateSchema::all_interacting(vec!["z".to_string()]).unwrap();
        let obs = ObsModelFit {
            beta0: 2.0,
            beta1: 2.0,
            beta2: DVector::from_vec(vec![0.0]),
            beta3: DVector::from_vec(vec![-0.5]),
            tau2: 1.0,
            schema,
            n_train: 100,
            window: Window::new(0, 100).unwrap(),
            coef_cov: DMatrix::zeros(4, 4),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n_b = 20;
        let locs = random_locs(n_b + 2, &mut rng);
        let spec = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0).unwrap();
        let x = gp_sample(&spec, 7.0, &locs, &mut rng);
        let mut z_b = DMatrix::zeros(n_b, 1);
        for i in 0..n_b {
            z_b[(i, 0)] = if i == 5 { 4.0 } else { rng.gen_range(0.0..1.0) };
        }
        let y_b = DVector::from_fn(n_b, |i, _| {
            let gain = 2.0 - 0.5 * z_b[(i, 0)];
            2.0 + gain * x[2 + i] + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let slice = TimeSlice {
            t: 0,
            ref_ids: vec!["r0".to_string(), "r1".to_string()],
            ref_locs: locs[..2].to_vec(),
            x_ref: DVector::from_vec(vec![x[0], x[1]]),
            b_ids: (0..n_b).map(|i| format!("b{i}")).collect(),
            b_locs: locs[2..].to_vec(),
            y_b,
            z_b,
        };

        let (res, params) = filter_slice(&slice, &obs, &FilterConfig::default()).unwrap();
        assert_eq!(res.diagnostics.n_unstable, 1);
        assert!(!res.stable[5]);
        assert!(res.xhat[5].is_infinite() || res.xhat[5].abs() > 1e6);
        // the update itself stays finite everywhere
        assert!(res.mean.iter().all(|v| v.is_finite()));
        assert!(params.kernel.sigma2.is_finite());
        // the flagged site leans on its neighbours: posterior variance there
        // stays close to the conditional prior's
        assert!(res.post_cov[(5, 5)] > 0.0);
    }

    /// Independent derivation of the same posterior through the precision
    /// form (Σ⁻¹ + H τ⁻²H)⁻¹, valid whenever Σ is invertible.
    #[test]
    fn gain_form_matches_precision_form() {
        let spec = KernelSpec::new(KernelFamily::Matern32, 6.0, 3.0, 0.0).unwrap();
        let obs = plain_obs_fit(1.5);
        let (slice, _) = toy_slice(3, 8, &spec, 7.0, &obs, 41);
        let params = SpatialParams { mu: 7.0, kernel: spec };

        let res = filter_time_point(&slice, &obs, &params).unwrap();

        let cond = condition_gaussian(&spec, 7.0, &slice.b_locs, &slice.ref_locs, &slice.x_ref)
            .unwrap();
        let sigma_inv = cond.cov.clone().try_inverse().expect("prior invertible");
        let inv = transform_observations(&slice, &obs).unwrap();
        let h = DMatrix::from_diagonal(&inv.gains);
        let precision = &sigma_inv + &h * &h / obs.tau2;
        let post_cov = precision.try_inverse().unwrap();
        let u = &slice.y_b - &inv.offsets;
        let mean = &post_cov * (&sigma_inv * &cond.mean + &h * &u / obs.tau2);

        for i in 0..slice.n_b() {
            assert_relative_eq!(res.mean[i], mean[i], max_relative = 1e-8);
            for j in 0..slice.n_b() {
                assert_relative_eq!(
                    res.post_cov[(i, j)],
                    post_cov[(i, j)],
                    epsilon = 1e-8 * spec.sigma2
                );
            }
        }
    }

    #[test]
    fn noise_limits_bracket_the_posterior() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0).unwrap();

        // enormous measurement noise: posterior collapses to the prior
        let obs_noisy = plain_obs_fit(1e12);
        let (slice, _) = toy_slice(3, 6, &spec, 7.0, &obs_noisy, 42);
        let params = SpatialParams { mu: 7.0, kernel: spec };
        let res = filter_time_point(&slice, &obs_noisy, &params).unwrap();
        let cond = condition_gaussian(&spec, 7.0, &slice.b_locs, &slice.ref_locs, &slice.x_ref)
            .unwrap();
        for i in 0..slice.n_b() {
            assert_relative_eq!(res.mean[i], cond.mean[i], epsilon = 1e-4);
            assert_relative_eq!(res.post_cov[(i, i)], cond.cov[(i, i)], epsilon = 1e-4);
        }

        // near-noiseless sensors: posterior reproduces the inverted values
        let obs_exact = plain_obs_fit(1e-12);
        let (slice, _) = toy_slice(3, 6, &spec, 7.0, &obs_exact, 43);
        let res = filter_time_point(&slice, &obs_exact, &params).unwrap();
        let inv = transform_observations(&slice, &obs_exact).unwrap();
        for i in 0..slice.n_b() {
            assert_relative_eq!(res.mean[i], inv.xhat[i], epsilon = 1e-4);
            assert!(res.post_cov[(i, i)].abs() < 1e-4);
        }
    }

    #[test]
    fn grid_reproduces_references_and_filtered_sites() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0).unwrap();
        let obs = plain_obs_fit(2.0);
        let (slice, _) = toy_slice(3, 6, &spec, 7.0, &obs, 44);
        let params = SpatialParams { mu: 7.0, kernel: spec };
        let res = filter_time_point(&slice, &obs, &params).unwrap();

        let mut grid = slice.ref_locs.clone();
        grid.extend_from_slice(&slice.b_locs);
        let pred = predict_grid(&params, &slice, &res, &grid).unwrap();

        for i in 0..slice.n_ref() {
            assert_relative_eq!(pred.mean[i], slice.x_ref[i], max_relative = 1e-8);
            assert!(pred.var[i] < 1e-8, "reference-site variance {}", pred.var[i]);
        }
        for i in 0..slice.n_b() {
            let k = slice.n_ref() + i;
            assert_relative_eq!(pred.mean[k], res.mean[i], max_relative = 1e-8);
            assert_relative_eq!(
                pred.var[k],
                res.post_cov[(i, i)].max(0.0),
                epsilon = 1e-8 * params.kernel.sigma2
            );
        }
    }

    #[test]
    fn grid_reverts_to_the_prior_far_from_data() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0).unwrap();
        let obs = plain_obs_fit(2.0);
        let (slice, _) = toy_slice(2, 5, &spec, 7.0, &obs, 45);
        let params = SpatialParams { mu: 7.0, kernel: spec };
        let res = filter_time_point(&slice, &obs, &params).unwrap();

        let far = vec![Location::new(500.0, 500.0)];
        let pred = predict_grid(&params, &slice, &res, &far).unwrap();
        assert_relative_eq!(pred.mean[0], 7.0, epsilon = 1e-6);
        assert_relative_eq!(pred.var[0], 10.0, epsilon = 1e-6);
    }

    #[test]
    fn filter_shrinks_toward_truth_on_average() {
        // pooling across space should beat the raw per-site inversion
        let spec = KernelSpec::new(KernelFamily::Exponential, 15.0, 3.0 / 0.7, 0.0).unwrap();
        let obs = plain_obs_fit(2.0);
        let params = SpatialParams { mu: 7.0, kernel: spec };
        let mut err_filter = 0.0;
        let mut err_raw = 0.0;
        let mut n = 0.0;
        for seed in 100..120 {
            let (slice, x_b) = toy_slice(3, 30, &spec, 7.0, &obs, seed);
            let res = filter_time_point(&slice, &obs, &params).unwrap();
            let inv = transform_observations(&slice, &obs).unwrap();
            for i in 0..slice.n_b() {
                err_filter += (res.mean[i] - x_b[i]).powi(2);
                err_raw += (inv.xhat[i] - x_b[i]).powi(2);
                n += 1.0;
            }
        }
        let rmse_filter = (err_filter / n).sqrt();
        let rmse_raw = (err_raw / n).sqrt();
        assert!(
            rmse_filter < rmse_raw,
            "filter {rmse_filter} vs raw inversion {rmse_raw}"
        );
    }
}
