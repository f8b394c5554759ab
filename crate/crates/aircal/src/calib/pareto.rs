//! Threshold-exceedance baseline: reference exceedances over a fixed
//! threshold follow a generalized Pareto distribution whose scale depends on
//! the low-cost reading and covariates. Below the threshold the low-cost
//! reading passes through unchanged.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{collect_training_records, CovariateSchema, TrainingRecord};
use crate::error::{Error, Result};
use crate::geo::{NetworkLayout, PanelDataset, Window};
use crate::optim::{nelder_mead, SimplexOptions};

/// Fitting needs at least this many exceedance pairs.
pub const PARETO_MIN_EXCEEDANCES: usize = 10;

/// Shape values this close to 1 are rejected during optimization so the
/// exceedance mean σ/(1−ξ) stays finite.
const XI_BARRIER: f64 = 0.995;

/// Generalized-Pareto exceedance model. The shape is
/// ξ = exp(γ₀) − 0.5 and the scale is
/// log σ = γ₁ + γ₂·log y + Σⱼ γ₂₊ⱼ·wⱼ + Σⱼ γ₂₊q₊ⱼ·wⱼ·log y,
/// where wⱼ is log zⱼ for continuous covariates and zⱼ itself for 0/1
/// indicators.
#[derive(Debug, Clone)]
pub struct ParetoFit {
    pub gamma: DVector<f64>,
    pub xi: f64,
    pub threshold: f64,
    pub schema: CovariateSchema,
    /// Indicator covariates enter the scale untransformed.
    pub is_indicator: Vec<bool>,
    pub n_exceedances: usize,
    pub loglik: f64,
}

fn transform_covariate(value: f64, indicator: bool) -> Result<f64> {
    if indicator {
        Ok(value)
    } else if value > 0.0 {
        Ok(value.ln())
    } else {
        Err(Error::InvalidInput(format!(
            "continuous covariate must be positive for the log link, got {value}"
        )))
    }
}

fn log_scale(gamma: &[f64], log_y: f64, w: &[f64]) -> f64 {
    let q = w.len();
    let mut s = gamma[1] + gamma[2] * log_y;
    for j in 0..q {
        s += gamma[3 + j] * w[j] + gamma[3 + q + j] * w[j] * log_y;
    }
    s
}

/// Negative GPD log-likelihood over exceedance rows (excess, log y, w).
fn neg_loglik(gamma: &[f64], rows: &[(f64, f64, Vec<f64>)]) -> f64 {
    let xi = gamma[0].exp() - 0.5;
    if xi >= XI_BARRIER {
        return f64::INFINITY;
    }
    let mut nll = 0.0;
    for (excess, log_y, w) in rows {
        let sigma = log_scale(gamma, *log_y, w).exp();
        if !sigma.is_finite() || sigma <= 0.0 {
            return f64::INFINITY;
        }
        let t = excess / sigma;
        if xi.abs() < 1e-12 {
            nll += sigma.ln() + t;
        } else {
            let arg = 1.0 + xi * t;
            if arg <= 0.0 {
                return f64::INFINITY;
            }
            nll += sigma.ln() + (1.0 + 1.0 / xi) * arg.ln();
        }
    }
    nll
}

fn exceedance_rows(
    records: &[TrainingRecord],
    threshold: f64,
    is_indicator: &[bool],
) -> Result<Vec<(f64, f64, Vec<f64>)>> {
    let mut rows = Vec::new();
    for r in records {
        if r.x <= threshold {
            continue;
        }
        if r.y <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "exceedance record needs a positive reading for the log link, got {}",
                r.y
            )));
        }
        let w = r
            .z
            .iter()
            .zip(is_indicator)
            .map(|(&z, &ind)| transform_covariate(z, ind))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((r.x - threshold, r.y.ln(), w));
    }
    Ok(rows)
}

/// A covariate whose observed values are all 0 or 1 is treated as an
/// indicator.
fn detect_indicators(records: &[TrainingRecord], q: usize) -> Vec<bool> {
    (0..q)
        .map(|j| records.iter().all(|r| r.z[j] == 0.0 || r.z[j] == 1.0))
        .collect()
}

/// Fit the exceedance model on collocated pairs with reference values above
/// the threshold. `seed` drives the optimizer restarts.
pub fn fit_pareto(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
    threshold: f64,
    seed: u64,
) -> Result<ParetoFit> {
    let records = collect_training_records(panel, layout, window, schema)?;
    fit_pareto_records(&records, schema, threshold, seed)
}

pub(crate) fn fit_pareto_records(
    records: &[TrainingRecord],
    schema: &CovariateSchema,
    threshold: f64,
    seed: u64,
) -> Result<ParetoFit> {
    let q = schema.q();
    let is_indicator = detect_indicators(records, q);
    let rows = exceedance_rows(records, threshold, &is_indicator)?;
    if rows.len() < PARETO_MIN_EXCEEDANCES {
        return Err(Error::InsufficientExceedances {
            found: rows.len(),
            required: PARETO_MIN_EXCEEDANCES,
        });
    }

    let dim = 3 + 2 * q;
    let opts = SimplexOptions {
        max_iters: 500 * dim,
        ftol_rel: 1e-8,
    };
    let objective = |g: &[f64]| neg_loglik(g, &rows);
    let steps = vec![0.1; dim];

    // deterministic start at γ = 0 plus seeded random restarts
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..4 {
        let start: Vec<f64> = if restart == 0 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
        };
        let res = nelder_mead(&objective, &start, &steps, &opts);
        if res.fx.is_finite() && best.as_ref().map_or(true, |(_, f)| res.fx < *f) {
            best = Some((res.x, res.fx));
        }
    }
    let (gamma, nll) = best.ok_or_else(|| {
        Error::FitDiverged("exceedance likelihood had no finite optimum".to_string())
    })?;
    let gamma = DVector::from_vec(gamma);

    Ok(ParetoFit {
        xi: gamma[0].exp() - 0.5,
        gamma,
        threshold,
        schema: schema.clone(),
        is_indicator,
        n_exceedances: rows.len(),
        loglik: -nll,
    })
}

/// Point prediction: the reading itself below the threshold, otherwise the
/// threshold plus the fitted exceedance mean σ(y,z)/(1−ξ).
pub fn predict_pareto(fit: &ParetoFit, y: f64, z: &[f64]) -> Result<f64> {
    if z.len() != fit.schema.q() {
        return Err(Error::InvalidInput(format!(
            "covariate vector has {} entries, schema expects {}",
            z.len(),
            fit.schema.q()
        )));
    }
    if y <= fit.threshold {
        return Ok(y);
    }
    if y <= 0.0 {
        return Err(Error::InvalidInput(
            "reading must be positive above the threshold for the log link".to_string(),
        ));
    }
    let w = z
        .iter()
        .zip(&fit.is_indicator)
        .map(|(&v, &ind)| transform_covariate(v, ind))
        .collect::<Result<Vec<f64>>>()?;
    let sigma = log_scale(fit.gamma.as_slice(), y.ln(), &w).exp();
    Ok(fit.threshold + sigma / (1.0 - fit.xi))
}
