//! Shared helpers for the integration suites. The posterior oracle here is
//! deliberately self-contained: it rebuilds the kernels from their formulas
//! and conditions one joint Gaussian by dense inversion, so agreement with
//! the library's staged Cholesky path is evidence, not tautology.

#![allow(dead_code)]

use aircal::calib::{CovariateSchema, ObsModelFit};
use aircal::covariance::KernelFamily;
use aircal::filter::SpatialParams;
use aircal::geo::{Location, TimeSlice, Window};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn kernel_value(family: KernelFamily, sigma2: f64, phi: f64, nugget: f64, d: f64) -> f64 {
    let base = match family {
        KernelFamily::Exponential => sigma2 * (-phi * d).exp(),
        KernelFamily::Matern32 => {
            let h = 3.0_f64.sqrt() * phi * d;
            sigma2 * (1.0 + h) * (-h).exp()
        }
        KernelFamily::SquaredExponential => sigma2 * (-(phi * d) * (phi * d)).exp(),
    };
    if d == 0.0 {
        base + nugget
    } else {
        base
    }
}

fn kernel_block(params: &SpatialParams, rows: &[Location], cols: &[Location]) -> DMatrix<f64> {
    let k = &params.kernel;
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let d = if rows[i] == cols[j] {
            0.0
        } else {
            rows[i].distance(&cols[j])
        };
        kernel_value(k.family, k.sigma2, k.phi, k.nugget, d)
    })
}

/// Posterior of the sensor-site concentrations by brute force: stack
/// [x_B; u; x_ref] as one joint Gaussian (u = y − offset = H·x_B + noise),
/// then condition the first block on everything observed with a plain
/// matrix inverse.
pub fn joint_gaussian_posterior(
    slice: &TimeSlice,
    fit: &ObsModelFit,
    params: &SpatialParams,
) -> (DVector<f64>, DMatrix<f64>) {
    let nb = slice.n_b();
    let nr = slice.n_ref();

    let mut gains = DVector::zeros(nb);
    let mut offsets = DVector::zeros(nb);
    for i in 0..nb {
        let mut gain = fit.beta1;
        let mut offset = fit.beta0;
        for j in 0..slice.z_b.ncols() {
            offset += fit.beta2[j] * slice.z_b[(i, j)];
            gain += fit.beta3[j] * slice.z_b[(i, j)];
        }
        gains[i] = gain;
        offsets[i] = offset;
    }

    let k_bb = kernel_block(params, &slice.b_locs, &slice.b_locs);
    let k_br = kernel_block(params, &slice.b_locs, &slice.ref_locs);
    let k_rr = kernel_block(params, &slice.ref_locs, &slice.ref_locs);
    let h = DMatrix::from_diagonal(&gains);

    // Joint covariance over [x_B (nb); u (nb); x_ref (nr)].
    let dim = 2 * nb + nr;
    let mut cov = DMatrix::zeros(dim, dim);
    cov.view_mut((0, 0), (nb, nb)).copy_from(&k_bb);
    cov.view_mut((0, nb), (nb, nb)).copy_from(&(&k_bb * &h));
    cov.view_mut((nb, 0), (nb, nb)).copy_from(&(&h * &k_bb));
    let mut u_cov = &h * &k_bb * &h;
    for i in 0..nb {
        u_cov[(i, i)] += fit.tau2;
    }
    cov.view_mut((nb, nb), (nb, nb)).copy_from(&u_cov);
    cov.view_mut((0, 2 * nb), (nb, nr)).copy_from(&k_br);
    cov.view_mut((2 * nb, 0), (nr, nb)).copy_from(&k_br.transpose());
    cov.view_mut((nb, 2 * nb), (nb, nr)).copy_from(&(&h * &k_br));
    cov.view_mut((2 * nb, nb), (nr, nb)).copy_from(&(&h * &k_br).transpose());
    cov.view_mut((2 * nb, 2 * nb), (nr, nr)).copy_from(&k_rr);

    let mut mean = DVector::zeros(dim);
    for i in 0..nb {
        mean[i] = params.mu;
        mean[nb + i] = gains[i] * params.mu;
    }
    for i in 0..nr {
        mean[2 * nb + i] = params.mu;
    }

    let mut observed = DVector::zeros(nb + nr);
    for i in 0..nb {
        observed[i] = slice.y_b[i] - offsets[i];
    }
    for i in 0..nr {
        observed[nb + i] = slice.x_ref[i];
    }

    let c_bo = cov.view((0, nb), (nb, nb + nr)).into_owned();
    let mut c_oo = cov.view((nb, nb), (nb + nr, nb + nr)).into_owned();
    // Tiny ridge on the observed block so exactly coincident sites stay
    // invertible; well below the comparison tolerance.
    for i in 0..nb + nr {
        c_oo[(i, i)] += 1e-12 * params.kernel.sill();
    }
    let c_oo_inv = c_oo.try_inverse().expect("oracle covariance inverts");
    let resid = &observed - mean.rows(nb, nb + nr);
    let post_mean = mean.rows(0, nb) + &c_bo * &c_oo_inv * resid;
    let post_cov = &k_bb - &c_bo * &c_oo_inv * c_bo.transpose();
    (post_mean, post_cov)
}

/// An observation-model fit with chosen coefficients (training metadata is
/// filled with placeholders; only the coefficients matter to the filter).
pub fn fixed_obs_fit(
    beta0: f64,
    beta1: f64,
    beta2: Vec<f64>,
    beta3: Vec<f64>,
    tau2: f64,
) -> ObsModelFit {
    let q = beta2.len();
    let names: Vec<String> = (0..q).map(|i| format!("z{i}")).collect();
    let schema = CovariateSchema::all_interacting(names).unwrap();
    let p = 2 + 2 * q;
    ObsModelFit {
        beta0,
        beta1,
        beta2: DVector::from_vec(beta2),
        beta3: DVector::from_vec(beta3),
        tau2,
        schema,
        n_train: 0,
        window: Window::new(0, 1).unwrap(),
        coef_cov: DMatrix::zeros(p, p),
    }
}

/// A random slice with `nb` sensor sites, `nr` reference sites, and `q`
/// covariates, readings generated from `fit` at a field drawn around `mu`.
pub fn random_slice<R: Rng>(
    rng: &mut R,
    nb: usize,
    nr: usize,
    q: usize,
    fit: &ObsModelFit,
    mu: f64,
    spread: f64,
    rough_tau: f64,
) -> TimeSlice {
    let b_locs: Vec<Location> = (0..nb)
        .map(|_| Location::new(rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let ref_locs: Vec<Location> = (0..nr)
        .map(|_| Location::new(rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let x_ref = DVector::from_fn(nr, |_, _| mu + spread * (rng.gen::<f64>() - 0.5));
    let z_b = DMatrix::from_fn(nb, q, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let y_b = DVector::from_fn(nb, |i, _| {
        let x = mu + spread * (rng.gen::<f64>() - 0.5);
        let z: Vec<f64> = z_b.row(i).iter().copied().collect();
        fit.offset(&z) + fit.gain(&z) * x + rough_tau * (rng.gen::<f64>() - 0.5)
    });
    TimeSlice::new(
        0,
        (0..nr).map(|i| format!("a{i}")).collect(),
        ref_locs,
        x_ref,
        (0..nb).map(|i| format!("b{i}")).collect(),
        b_locs,
        y_b,
        z_b,
    )
    .unwrap()
}

pub fn max_rel_err(got: &DVector<f64>, want: &DVector<f64>, scale: f64) -> f64 {
    got.iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b).abs() / (b.abs() + scale))
        .fold(0.0, f64::max)
}

pub fn max_rel_err_mat(got: &DMatrix<f64>, want: &DMatrix<f64>, scale: f64) -> f64 {
    got.iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b).abs() / (b.abs() + scale))
        .fold(0.0, f64::max)
}
