//! Per-site calibration models: the inverse-regression observation model,
//! the forward regression-calibration baseline, the generalized-Pareto
//! threshold baseline, and the no-collocation training variant.

mod pareto;
mod no_collocation;

pub use no_collocation::{fit_obs_no_collocation, fit_regcal_no_collocation, kriged_training_records};
pub use pareto::{fit_pareto, predict_pareto, ParetoFit, PARETO_MIN_EXCEEDANCES};
pub(crate) use pareto::fit_pareto_records;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geo::{NetworkLayout, PanelDataset, Window};

/// Gain magnitudes below this make the inverted prediction unstable
/// (flagged, never clamped; the spatial filter downweights them).
pub const EPS_GAIN: f64 = 1e-6;

/// Ordered covariate names with a per-covariate flag controlling whether the
/// covariate interacts with the regressor (gain term) or enters only as an
/// offset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovariateSchema {
    names: Vec<String>,
    interacts: Vec<bool>,
}

impl CovariateSchema {
    pub fn new(names: Vec<String>, interacts: Vec<bool>) -> Result<Self> {
        if names.len() != interacts.len() {
            return Err(Error::InvalidInput(
                "schema names/interaction flags length mismatch".to_string(),
            ));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidInput(
                "duplicate covariate name in schema".to_string(),
            ));
        }
        Ok(CovariateSchema { names, interacts })
    }

    /// Every covariate participates in the gain interaction.
    pub fn all_interacting(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        CovariateSchema::new(names, vec![true; n])
    }

    /// The covariate-free schema (plain gain/offset calibration).
    pub fn empty() -> Self {
        CovariateSchema {
            names: Vec::new(),
            interacts: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn interacts(&self) -> &[bool] {
        &self.interacts
    }

    pub fn q(&self) -> usize {
        self.names.len()
    }

    pub fn n_interacting(&self) -> usize {
        self.interacts.iter().filter(|&&b| b).count()
    }

    /// Design width: intercept + regressor + offsets + interactions.
    pub fn design_columns(&self) -> usize {
        2 + self.q() + self.n_interacting()
    }

    /// Indices of this schema's covariates within a panel's covariate list.
    pub fn column_indices(&self, panel_names: &[String]) -> Result<Vec<usize>> {
        self.names
            .iter()
            .map(|n| {
                panel_names
                    .iter()
                    .position(|p| p == n)
                    .ok_or_else(|| Error::InvalidInput(format!("covariate {n:?} not in panel")))
            })
            .collect()
    }
}

/// Which way the regression runs. `Inverse` regresses the low-cost reading on
/// the reference value (classical measurement error); `Forward` regresses the
/// reference value on the low-cost reading (regression calibration).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// One paired training row: low-cost reading, reference value, covariates in
/// schema order.
#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub y: f64,
    pub x: f64,
    pub z: Vec<f64>,
}

/// Paired (y, x_ref) rows at collocated sites inside the window, with
/// covariates selected per the schema.
pub fn collect_training_records(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
) -> Result<Vec<TrainingRecord>> {
    if layout
        .sites()
        .iter()
        .all(|s| s.role != crate::geo::SiteRole::Collocated)
    {
        return Err(Error::NoReferenceData(
            ": no collocated (role A) site in layout".to_string(),
        ));
    }
    let cols = schema.column_indices(panel.covariate_names())?;
    let mut out = Vec::new();
    for r in panel.records() {
        if !window.contains(r.t) {
            continue;
        }
        let Some(site) = layout.get(&r.site_id) else {
            continue;
        };
        if site.role != crate::geo::SiteRole::Collocated {
            continue;
        }
        if let (Some(y), Some(x)) = (r.y, r.x_ref) {
            out.push(TrainingRecord {
                y,
                x,
                z: cols.iter().map(|&c| r.covariates[c]).collect(),
            });
        }
    }
    Ok(out)
}

fn design_row(schema: &CovariateSchema, regressor: f64, z: &[f64], row: &mut Vec<f64>) {
    row.clear();
    row.push(1.0);
    row.push(regressor);
    row.extend_from_slice(z);
    for (j, &flag) in schema.interacts.iter().enumerate() {
        if flag {
            row.push(z[j] * regressor);
        }
    }
}

/// Design matrix and response for the chosen direction. Columns are
/// [1, regressor, z..., z_interacting · regressor...].
pub fn build_design_matrix(
    records: &[TrainingRecord],
    schema: &CovariateSchema,
    direction: Direction,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = schema.design_columns();
    if records.len() < p {
        return Err(Error::UnderdeterminedFit {
            rows: records.len(),
            cols: p,
        });
    }
    let mut data = Vec::with_capacity(records.len() * p);
    let mut resp = Vec::with_capacity(records.len());
    let mut row = Vec::with_capacity(p);
    for r in records {
        if r.z.len() != schema.q() {
            return Err(Error::InvalidInput(
                "training record covariate dimension mismatch".to_string(),
            ));
        }
        let (regressor, response) = match direction {
            Direction::Forward => (r.y, r.x),
            Direction::Inverse => (r.x, r.y),
        };
        design_row(schema, regressor, &r.z, &mut row);
        data.extend_from_slice(&row);
        resp.push(response);
    }
    Ok((
        DMatrix::from_row_slice(records.len(), p, &data),
        DVector::from_vec(resp),
    ))
}

/// Shared OLS machinery: coefficients, residual variance, coefficient
/// covariance.
#[derive(Debug, Clone)]
struct OlsFit {
    coeffs: DVector<f64>,
    tau2: f64,
    coef_cov: DMatrix<f64>,
    n: usize,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < p {
        return Err(Error::UnderdeterminedFit { rows: n, cols: p });
    }
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (n.max(p) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::RankDeficientDesign { rank, cols: p });
    }
    let coeffs = svd
        .solve(y, tol)
        .map_err(|e| Error::InvalidInput(format!("OLS solve failed: {e}")))?;

    let resid = y - x * &coeffs;
    let rss = resid.dot(&resid);
    let tau2 = if n > p { rss / (n - p) as f64 } else { 0.0 };

    // (XᵀX)⁻¹ = V S⁻² Vᵀ from the same SVD
    let v = svd.v_t.as_ref().unwrap().transpose();
    let s_inv2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let xtx_inv = &v * s_inv2 * v.transpose();
    let coef_cov = xtx_inv * tau2;

    Ok(OlsFit {
        coeffs,
        tau2,
        coef_cov,
        n,
    })
}

/// Unpack a design-order coefficient vector into (β₀, β₁, β₂, β₃). β₃ carries
/// zeros for non-interacting covariates so both vectors have length q.
fn unpack_coeffs(schema: &CovariateSchema, coeffs: &DVector<f64>) -> (f64, f64, DVector<f64>, DVector<f64>) {
    let q = schema.q();
    let beta0 = coeffs[0];
    let beta1 = coeffs[1];
    let beta2 = DVector::from_fn(q, |j, _| coeffs[2 + j]);
    let mut beta3 = DVector::zeros(q);
    let mut k = 2 + q;
    for (j, &flag) in schema.interacts.iter().enumerate() {
        if flag {
            beta3[j] = coeffs[k];
            k += 1;
        }
    }
    (beta0, beta1, beta2, beta3)
}

macro_rules! regression_fit_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone)]
        pub struct $name {
            pub beta0: f64,
            pub beta1: f64,
            pub beta2: DVector<f64>,
            pub beta3: DVector<f64>,
            pub tau2: f64,
            pub schema: CovariateSchema,
            pub n_train: usize,
            pub window: Window,
            /// Coefficient covariance in design-column order
            /// [1, regressor, z..., z_interacting·regressor...].
            pub coef_cov: DMatrix<f64>,
        }

        impl $name {
            fn from_ols(ols: OlsFit, schema: CovariateSchema, window: Window) -> Self {
                let (beta0, beta1, beta2, beta3) = unpack_coeffs(&schema, &ols.coeffs);
                $name {
                    beta0,
                    beta1,
                    beta2,
                    beta3,
                    tau2: ols.tau2,
                    schema,
                    n_train: ols.n,
                    window,
                    coef_cov: ols.coef_cov,
                }
            }

            /// Coefficients back in design-column order.
            pub fn design_coeffs(&self) -> DVector<f64> {
                let mut v = vec![self.beta0, self.beta1];
                v.extend(self.beta2.iter().copied());
                for (j, &flag) in self.schema.interacts().iter().enumerate() {
                    if flag {
                        v.push(self.beta3[j]);
                    }
                }
                DVector::from_vec(v)
            }

            /// Offset part β₀ + β₂′z.
            pub fn offset(&self, z: &[f64]) -> f64 {
                self.beta0 + self.beta2.iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
            }

            /// Gain part β₁ + β₃′z.
            pub fn gain(&self, z: &[f64]) -> f64 {
                self.beta1 + self.beta3.iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
            }
        }
    };
}

regression_fit_type!(
    /// The inverse-regression observation model
    /// y = β₀ + β₁x + β₂′z + β₃′z·x + ε, ε ~ N(0, τ²),
    /// fit by OLS on collocated pairs.
    ObsModelFit
);

regression_fit_type!(
    /// The forward regression-calibration baseline
    /// E(x) = β₀ + β₁y + β₂′z + β₃′z·y,
    /// fit by OLS on collocated pairs. `tau2` is the forward residual
    /// variance.
    RegCalFit
);

pub(crate) fn fit_records_inverse(
    records: &[TrainingRecord],
    schema: &CovariateSchema,
    window: Window,
) -> Result<ObsModelFit> {
    let (x, y) = build_design_matrix(records, schema, Direction::Inverse)?;
    Ok(ObsModelFit::from_ols(ols(&x, &y)?, schema.clone(), window))
}

/// Fit the observation model (regress y on x_ref) on collocated pairs in the
/// window.
pub fn fit_inverse_regression(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
) -> Result<ObsModelFit> {
    let records = collect_training_records(panel, layout, window, schema)?;
    fit_records_inverse(&records, schema, window)
}

/// Fit the regression-calibration baseline (regress x_ref on y) on collocated
/// pairs in the window.
pub fn fit_regression_calibration(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
) -> Result<RegCalFit> {
    let records = collect_training_records(panel, layout, window, schema)?;
    fit_regcal_records(&records, schema, window)
}

pub(crate) fn fit_regcal_records(
    records: &[TrainingRecord],
    schema: &CovariateSchema,
    window: Window,
) -> Result<RegCalFit> {
    let (x, y) = build_design_matrix(records, schema, Direction::Forward)?;
    Ok(RegCalFit::from_ols(ols(&x, &y)?, schema.clone(), window))
}

/// Plug-in regression-calibration prediction with the standard OLS
/// prediction variance τ² + x₀ᵀ·coefcov·x₀.
pub fn predict_regcal(fit: &RegCalFit, y: f64, z: &[f64]) -> Result<(f64, f64)> {
    if z.len() != fit.schema.q() {
        return Err(Error::InvalidInput(format!(
            "covariate vector has {} entries, schema expects {}",
            z.len(),
            fit.schema.q()
        )));
    }
    let mut row = Vec::with_capacity(fit.schema.design_columns());
    design_row(&fit.schema, y, z, &mut row);
    let x0 = DVector::from_vec(row);
    let mean = fit.design_coeffs().dot(&x0);
    let var = fit.tau2 + (x0.transpose() * &fit.coef_cov * &x0)[(0, 0)];
    Ok((mean, var))
}

/// Invert the observation model at one record:
/// x̂ = (y − β₀ − β₂′z) / (β₁ + β₃′z).
///
/// Returns the prediction and a stability flag; `false` means the gain
/// magnitude fell below [`EPS_GAIN`] and the value is unreliable (it is still
/// returned, never clamped).
pub fn invert_prediction(fit: &ObsModelFit, y: f64, z: &[f64]) -> Result<(f64, bool)> {
    if z.len() != fit.schema.q() {
        return Err(Error::InvalidInput(format!(
            "covariate vector has {} entries, schema expects {}",
            z.len(),
            fit.schema.q()
        )));
    }
    let gain = fit.gain(z);
    let xhat = (y - fit.offset(z)) / gain;
    Ok((xhat, gain.abs() >= EPS_GAIN))
}

/// Diagonal gain matrix H with entries β₁ + β₃′zᵢ, one per row of `z_b`.
pub fn obs_gain_matrix(fit: &ObsModelFit, z_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&obs_gains(fit, z_b)?))
}

/// The diagonal of H as a vector (cheaper form used by the filter).
pub fn obs_gains(fit: &ObsModelFit, z_b: &DMatrix<f64>) -> Result<DVector<f64>> {
    if z_b.ncols() != fit.schema.q() {
        return Err(Error::InvalidInput(format!(
            "covariate matrix has {} columns, schema expects {}",
            z_b.ncols(),
            fit.schema.q()
        )));
    }
    Ok(DVector::from_fn(z_b.nrows(), |i, _| {
        let z: Vec<f64> = z_b.row(i).iter().copied().collect();
        fit.gain(&z)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn schema_rt() -> CovariateSchema {
        CovariateSchema::all_interacting(vec!["rh".to_string(), "temp".to_string()]).unwrap()
    }

    fn window() -> Window {
        Window::new(0, 100).unwrap()
    }

    #[test]
    fn design_matrix_shapes() {
        let records: Vec<TrainingRecord> = (0..12)
            .map(|i| TrainingRecord {
                y: i as f64,
                x: 2.0 * i as f64,
                z: vec![0.1 * i as f64, 1.0],
            })
            .collect();
        let schema = schema_rt();
        let (x, _) = build_design_matrix(&records, &schema, Direction::Inverse).unwrap();
        assert_eq!(x.ncols(), 6); // 1, x, rh, temp, rh·x, temp·x

        let partial =
            CovariateSchema::new(vec!["rh".to_string(), "temp".to_string()], vec![true, false])
                .unwrap();
        let (x, _) = build_design_matrix(&records, &partial, Direction::Inverse).unwrap();
        assert_eq!(x.ncols(), 5);

        let none = CovariateSchema::empty();
        let recs: Vec<TrainingRecord> = records
            .iter()
            .map(|r| TrainingRecord {
                y: r.y,
                x: r.x,
                z: vec![],
            })
            .collect();
        let (x, _) = build_design_matrix(&recs, &none, Direction::Inverse).unwrap();
        assert_eq!(x.ncols(), 2);
    }

    #[test]
    fn underdetermined_design_is_rejected() {
        let records = vec![TrainingRecord {
            y: 1.0,
            x: 2.0,
            z: vec![],
        }];
        let err =
            build_design_matrix(&records, &CovariateSchema::empty(), Direction::Inverse)
                .unwrap_err();
        assert!(matches!(err, Error::UnderdeterminedFit { rows: 1, cols: 2 }));
    }

    #[test]
    fn collinear_design_is_rejected() {
        // a covariate that duplicates the intercept column
        let records: Vec<TrainingRecord> = (0..10)
            .map(|i| TrainingRecord {
                y: i as f64 + 0.5,
                x: i as f64,
                z: vec![1.0],
            })
            .collect();
        let schema = CovariateSchema::new(vec!["one".to_string()], vec![false]).unwrap();
        let (x, y) = build_design_matrix(&records, &schema, Direction::Inverse).unwrap();
        assert!(matches!(
            ols(&x, &y),
            Err(Error::RankDeficientDesign { .. })
        ));
    }

    #[test]
    fn noise_free_inverse_fit_recovers_exactly() {
        // y = 2 + 1.5 x, no covariates, no noise
        let records: Vec<TrainingRecord> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.7;
                TrainingRecord {
                    y: 2.0 + 1.5 * x,
                    x,
                    z: vec![],
                }
            })
            .collect();
        let fit = fit_records_inverse(&records, &CovariateSchema::empty(), window()).unwrap();
        assert_relative_eq!(fit.beta0, 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.beta1, 1.5, epsilon = 1e-10);
        assert!(fit.tau2.abs() < 1e-10);

        // inverting the noise-free model recovers x exactly
        let (xhat, stable) = invert_prediction(&fit, 2.0 + 1.5 * 4.2, &[]).unwrap();
        assert!(stable);
        assert_relative_eq!(xhat, 4.2, epsilon = 1e-8);
    }

    #[test]
    fn noise_free_forward_fit_inverts_exactly() {
        // x = (y − 2) / 1.5 seen from the forward direction
        let records: Vec<TrainingRecord> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.7;
                TrainingRecord {
                    y: 2.0 + 1.5 * x,
                    x,
                    z: vec![],
                }
            })
            .collect();
        let fit = fit_regcal_records(&records, &CovariateSchema::empty(), window()).unwrap();
        let (mean, var) = predict_regcal(&fit, 12.0, &[]).unwrap();
        assert_relative_eq!(mean, (12.0 - 2.0) / 1.5, epsilon = 1e-8);
        assert!(var.abs() < 1e-10);
    }

    #[test]
    fn regcal_interval_halfwidth_is_at_least_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<TrainingRecord> = (0..200)
            .map(|_| {
                let x: f64 = 7.0 + 3.0 * rng.sample::<f64, _>(StandardNormal);
                let y = 2.0 + 2.0 * x + rng.sample::<f64, _>(StandardNormal);
                TrainingRecord { y, x, z: vec![] }
            })
            .collect();
        let fit = fit_regcal_records(&records, &CovariateSchema::empty(), window()).unwrap();
        for y in [0.0, 10.0, 30.0] {
            let (_, var) = predict_regcal(&fit, y, &[]).unwrap();
            assert!(var >= fit.tau2);
        }
    }

    #[test]
    fn ols_residuals_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records: Vec<TrainingRecord> = (0..100)
            .map(|_| {
                let x: f64 = rng.gen_range(0.0..10.0);
                let z = vec![rng.gen_range(20.0..80.0)];
                let y = 1.0 + 2.0 * x + 0.05 * z[0] + 0.01 * z[0] * x
                    + rng.sample::<f64, _>(StandardNormal);
                TrainingRecord { y, x, z }
            })
            .collect();
        let schema = CovariateSchema::all_interacting(vec!["rh".to_string()]).unwrap();
        let fit = fit_records_inverse(&records, &schema, window()).unwrap();
        let resid_sum: f64 = records
            .iter()
            .map(|r| r.y - fit.offset(&r.z) - fit.gain(&r.z) * r.x)
            .sum();
        assert!(resid_sum.abs() < 1e-8, "residual sum {resid_sum}");
    }

    /// Monte-Carlo recovery: simulated data from the observation model with
    /// known coefficients; estimates land within 3 standard errors.
    #[test]
    fn inverse_fit_recovers_simulated_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (b0, b1, b2, b3) = (2.0, 2.0, 0.03, 0.004);
        let tau = 2.0_f64.sqrt();
        let records: Vec<TrainingRecord> = (0..1000)
            .map(|_| {
                let x: f64 = 7.0 + 15.0_f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let z = vec![rng.gen_range(24.0..76.0)];
                let y = b0 + b1 * x + b2 * z[0] + b3 * z[0] * x
                    + tau * rng.sample::<f64, _>(StandardNormal);
                TrainingRecord { y, x, z }
            })
            .collect();
        let schema = CovariateSchema::all_interacting(vec!["rh".to_string()]).unwrap();
        let fit = fit_records_inverse(&records, &schema, window()).unwrap();

        let truth = [b0, b1, b2, b3];
        let est = [fit.beta0, fit.beta1, fit.beta2[0], fit.beta3[0]];
        for k in 0..4 {
            let se = fit.coef_cov[(k, k)].sqrt();
            assert!(
                (est[k] - truth[k]).abs() <= 3.0 * se,
                "coefficient {k}: {} vs {} (se {se})",
                est[k],
                truth[k]
            );
        }
        assert!((fit.tau2 - 2.0).abs() < 0.3, "tau2 {}", fit.tau2);
    }

    #[test]
    fn inversion_identity_and_arithmetic() {
        let fit = ObsModelFit {
            beta0: 0.0,
            beta1: 1.0,
            beta2: DVector::zeros(0),
            beta3: DVector::zeros(0),
            tau2: 1.0,
            schema: CovariateSchema::empty(),
            n_train: 10,
            window: window(),
            coef_cov: DMatrix::zeros(2, 2),
        };
        assert_eq!(invert_prediction(&fit, 5.0, &[]).unwrap(), (5.0, true));

        let fit2 = ObsModelFit {
            beta0: 2.0,
            beta1: 2.0,
            ..fit.clone()
        };
        assert_eq!(invert_prediction(&fit2, 12.0, &[]).unwrap(), (5.0, true));

        let tiny = ObsModelFit {
            beta0: 0.0,
            beta1: 1e-9,
            ..fit
        };
        let (_, stable) = invert_prediction(&tiny, 5.0, &[]).unwrap();
        assert!(!stable);
    }

    #[test]
    fn gain_matrix_matches_inversion_denominators() {
        let schema = schema_rt();
        let fit = ObsModelFit {
            beta0: 1.0,
            beta1: 2.0,
            beta2: DVector::from_vec(vec![0.02, 0.03]),
            beta3: DVector::from_vec(vec![0.004, -0.003]),
            tau2: 2.0,
            schema,
            n_train: 50,
            window: window(),
            coef_cov: DMatrix::zeros(6, 6),
        };
        let z_b = DMatrix::from_row_slice(3, 2, &[30.0, 20.0, 50.0, 40.0, 70.0, 25.0]);
        let h = obs_gain_matrix(&fit, &z_b).unwrap();
        assert_eq!(h.nrows(), 3);
        for i in 0..3 {
            let z: Vec<f64> = z_b.row(i).iter().copied().collect();
            let y = 10.0;
            let (xhat, _) = invert_prediction(&fit, y, &z).unwrap();
            // denominator implied by the inversion equals the H entry
            let denom = (y - fit.offset(&z)) / xhat;
            assert_relative_eq!(h[(i, i)], denom, max_relative = 1e-12);
            for j in 0..3 {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
        // β₃ = 0 collapses H to β₁·I
        let no_int = ObsModelFit {
            beta3: DVector::from_vec(vec![0.0, 0.0]),
            ..fit
        };
        let h = obs_gain_matrix(&no_int, &z_b).unwrap();
        for i in 0..3 {
            assert_eq!(h[(i, i)], 2.0);
        }
    }
}
