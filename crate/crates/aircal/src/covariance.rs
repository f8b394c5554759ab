//! Spatial covariance kernels, conditional-Gaussian (kriging) math, GP
//! log-likelihood, and empirical variograms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geo::Location;

/// Stationary isotropic covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Exponential,
    Matern32,
    SquaredExponential,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::SquaredExponential => "sqexp",
        }
    }

    pub fn parse(s: &str) -> Option<KernelFamily> {
        match s {
            "exponential" | "exp" => Some(KernelFamily::Exponential),
            "matern32" | "matern" => Some(KernelFamily::Matern32),
            "sqexp" | "squared-exponential" | "gaussian" => Some(KernelFamily::SquaredExponential),
            _ => None,
        }
    }
}

/// A covariance kernel: partial sill `sigma2`, decay `phi`, and a nugget that
/// applies only at exactly coincident locations (Kronecker delta, not "close
/// enough").
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub phi: f64,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma2: f64, phi: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family,
            sigma2,
            phi,
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel sigma2 must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel phi must be positive and finite, got {}",
                self.phi
            )));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel nugget must be non-negative and finite, got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    /// Sill at distance zero: sigma2 + nugget.
    pub fn sill(&self) -> f64 {
        self.sigma2 + self.nugget
    }
}

/// Evaluate the kernel at distance `d ≥ 0`. The nugget contributes only at
/// d == 0 exactly.
pub fn kernel_eval(spec: &KernelSpec, d: f64) -> f64 {
    debug_assert!(d >= 0.0);
    let base = match spec.family {
        KernelFamily::Exponential => spec.sigma2 * (-spec.phi * d).exp(),
        KernelFamily::Matern32 => {
            let h = 3.0_f64.sqrt() * spec.phi * d;
            spec.sigma2 * (1.0 + h) * (-h).exp()
        }
        KernelFamily::SquaredExponential => {
            let h = spec.phi * d;
            spec.sigma2 * (-h * h).exp()
        }
    };
    if d == 0.0 {
        base + spec.nugget
    } else {
        base
    }
}

/// Covariance matrix between two location sets: entry (i, j) is the kernel at
/// ‖rows[i] − cols[j]‖, with the nugget added on exact coincidences.
pub fn cov_matrix(spec: &KernelSpec, rows: &[Location], cols: &[Location]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        if rows[i] == cols[j] {
            kernel_eval(spec, 0.0)
        } else {
            kernel_eval(spec, rows[i].distance(&cols[j]))
        }
    })
}

/// Pairwise distance matrix (0 on the diagonal). Used to amortize distance
/// computation across repeated kernel evaluations in parameter search.
pub fn distance_matrix(locs: &[Location]) -> DMatrix<f64> {
    DMatrix::from_fn(locs.len(), locs.len(), |i, j| {
        if i == j {
            0.0
        } else {
            locs[i].distance(&locs[j])
        }
    })
}

/// Covariance matrix from a precomputed symmetric distance matrix. The nugget
/// is added wherever the distance is exactly zero.
pub fn cov_from_distances(spec: &KernelSpec, dists: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(dists.nrows(), dists.ncols(), |i, j| {
        kernel_eval(spec, dists[(i, j)])
    })
}

/// A Cholesky factorization obtained after the jitter ladder, together with
/// how many escalations it took (0 = factored cleanly).
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub escalations: usize,
}

/// Factor a symmetric matrix, adding jitter on failure.
///
/// The ladder is: no jitter, then 1e-8·sigma2, escalating by 10 up to three
/// more times. Exhausting the ladder yields `SingularCovariance`.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, sigma2: f64) -> Result<JitteredCholesky> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(JitteredCholesky {
            chol,
            escalations: 0,
        });
    }
    let mut jitter = 1e-8 * sigma2;
    for attempt in 1..=4 {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(JitteredCholesky {
                chol,
                escalations: attempt,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance { attempts: 4 })
}

/// A conditional (kriging) Gaussian: mean vector and covariance of the target
/// locations given observed values.
#[derive(Debug, Clone)]
pub struct CondGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Jitter escalations needed to factor the Gram matrix (diagnostic).
    pub jitter_escalations: usize,
}

/// Condition a constant-mean GP at `target_locs` on observed `known_vals` at
/// `known_locs`:
///
/// mean  = µ1 + C_tk · C_kk⁻¹ (v − µ1)
/// cov   = C_tt − C_tk · C_kk⁻¹ · C_kt
///
/// The Gram solve goes through [`cholesky_with_jitter`]; the returned
/// covariance is explicitly symmetrized.
pub fn condition_gaussian(
    spec: &KernelSpec,
    mu: f64,
    target_locs: &[Location],
    known_locs: &[Location],
    known_vals: &DVector<f64>,
) -> Result<CondGaussian> {
    if known_locs.is_empty() {
        return Err(Error::NoReferenceData(
            ": conditioning requires at least one known site".to_string(),
        ));
    }
    if known_locs.len() != known_vals.len() {
        return Err(Error::InvalidInput(
            "known locations/values length mismatch".to_string(),
        ));
    }

    let c_kk = cov_matrix(spec, known_locs, known_locs);
    let jc = cholesky_with_jitter(&c_kk, spec.sigma2)?;

    let c_tk = cov_matrix(spec, target_locs, known_locs);
    let centered = known_vals.map(|v| v - mu);

    let mean = DVector::from_element(target_locs.len(), mu) + &c_tk * jc.chol.solve(&centered);

    // cov = C_tt − C_tk K⁻¹ C_kt, symmetrized against rounding
    let solved = jc.chol.solve(&c_tk.transpose()); // K⁻¹ C_kt
    let mut cov = cov_matrix(spec, target_locs, target_locs) - &c_tk * solved;
    let cov_t = cov.transpose();
    cov = (cov + cov_t) * 0.5;

    Ok(CondGaussian {
        mean,
        cov,
        jitter_escalations: jc.escalations,
    })
}

/// Log-density of `vals` under a GP with constant mean `mu` and covariance
/// from `spec` at `locs`.
pub fn gp_loglik(spec: &KernelSpec, mu: f64, locs: &[Location], vals: &DVector<f64>) -> Result<f64> {
    let c = cov_matrix(spec, locs, locs);
    gp_loglik_with_cov(&c, spec.sigma2, mu, vals)
}

/// Same as [`gp_loglik`] with a caller-assembled covariance matrix (used by
/// the MLE loop, which reuses a distance matrix).
pub fn gp_loglik_with_cov(
    c: &DMatrix<f64>,
    sigma2: f64,
    mu: f64,
    vals: &DVector<f64>,
) -> Result<f64> {
    let n = vals.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty value vector".to_string()));
    }
    if c.nrows() != n {
        return Err(Error::InvalidInput(
            "covariance/value dimension mismatch".to_string(),
        ));
    }
    let jc = cholesky_with_jitter(c, sigma2)?;
    let centered = vals.map(|v| v - mu);
    let l = jc.chol.l_dirty();
    let mut logdet_half = 0.0;
    for i in 0..n {
        logdet_half += l[(i, i)].ln();
    }
    let alpha = jc.chol.solve(&centered);
    let quad = centered.dot(&alpha);
    Ok(-0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() - logdet_half - 0.5 * quad)
}

/// GLS estimate of a constant mean under covariance `chol`:
/// µ̂ = (1ᵀC⁻¹v)/(1ᵀC⁻¹1).
pub fn gls_mean(chol: &Cholesky<f64, Dyn>, vals: &DVector<f64>) -> f64 {
    let ones = DVector::from_element(vals.len(), 1.0);
    let ci_ones = chol.solve(&ones);
    ones.dot(&chol.solve(vals)) / ones.dot(&ci_ones)
}

/// One bin of an empirical semivariogram.
#[derive(Debug, Clone, PartialEq)]
pub struct VariogramBin {
    /// Bin center distance.
    pub distance: f64,
    /// Matheron estimate ½·mean((vᵢ−vⱼ)²); `None` for empty bins.
    pub semivariance: Option<f64>,
    pub pairs: usize,
}

/// Classical Matheron semivariogram on `n_bins` equal-width bins spanning
/// [0, max pairwise distance / 2]. Pairs beyond the cutoff accumulate in the
/// final bin, so no pair is dropped.
pub fn empirical_variogram(
    locs: &[Location],
    vals: &[f64],
    n_bins: usize,
) -> Result<Vec<VariogramBin>> {
    if locs.len() != vals.len() {
        return Err(Error::InvalidInput(
            "locations/values length mismatch".to_string(),
        ));
    }
    if locs.len() < 2 {
        return Err(Error::InvalidInput(
            "variogram needs at least two sites".to_string(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("variogram needs n_bins >= 1".to_string()));
    }

    let mut max_d: f64 = 0.0;
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            max_d = max_d.max(locs[i].distance(&locs[j]));
        }
    }
    if max_d == 0.0 {
        return Err(Error::InvalidInput(
            "all sites coincide; variogram undefined".to_string(),
        ));
    }

    let cutoff = max_d / 2.0;
    let width = cutoff / n_bins as f64;
    let mut sums = vec![0.0_f64; n_bins];
    let mut counts = vec![0_usize; n_bins];
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            let d = locs[i].distance(&locs[j]);
            let bin = ((d / width) as usize).min(n_bins - 1);
            sums[bin] += 0.5 * (vals[i] - vals[j]).powi(2);
            counts[bin] += 1;
        }
    }

    Ok((0..n_bins)
        .map(|b| VariogramBin {
            distance: (b as f64 + 0.5) * width,
            semivariance: if counts[b] > 0 {
                Some(sums[b] / counts[b] as f64)
            } else {
                None
            },
            pairs: counts[b],
        })
        .collect())
}
