use aircal::calib::{fit_inverse_regression, fit_regression_calibration, predict_regcal, CovariateSchema};
use aircal::covariance::{KernelFamily, KernelSpec};
use aircal::filter::{filter_slice, filter_time_point, FilterConfig, MleConfig, SpatialParams};
use aircal::geo::{Location, NetworkLayout, PanelDataset, PanelRecord, Site, SiteRole, Window};
use aircal::sim::{simulate_covariates, simulate_gp_truth, simulate_lowcost, GenCoefficients, COVARIATE_NAMES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// [mle, true-params, regcal, nugget-as-is, nugget-stripped]
fn run_case(beta1: f64, sigma2: f64, seed: u64, fitted: &mut [f64; 3]) -> [f64; 5] {
    let n_train = 500usize;
    let n_test = 50usize;
    let n_times = n_train + n_test;
    let n_sensors = 50usize;
    let phi = 3.0 / 2.0_f64.sqrt();
    let mu = 7.0;
    let tau2 = 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = vec![Site { id: "a0".into(), loc: Location::new(rng.gen(), rng.gen()), role: SiteRole::Collocated }];
    for i in 0..n_sensors {
        sites.push(Site { id: format!("b{i}"), loc: Location::new(rng.gen(), rng.gen()), role: SiteRole::LowCostOnly });
    }
    let layout = NetworkLayout::new(sites).unwrap();
    let locs: Vec<Location> = layout.sites().iter().map(|s| s.loc).collect();

    let spec = KernelSpec::new(KernelFamily::Exponential, sigma2, phi, 0.0).unwrap();
    let truth = simulate_gp_truth(&locs, &spec, mu, n_times, seed + 1).unwrap();
    let covs = simulate_covariates(n_times, seed + 2);
    let coeffs = GenCoefficients { beta1, ..GenCoefficients::default() };
    let y = simulate_lowcost(&truth, &covs, &coeffs, tau2, seed + 3).unwrap();

    let mut records = Vec::new();
    for t in 0..n_times {
        for (j, site) in layout.sites().iter().enumerate() {
            records.push(PanelRecord {
                site_id: site.id.clone(),
                t: t as i64,
                y: site.role.has_lowcost().then(|| y[(t, j)]),
                x_ref: site.role.has_reference().then(|| truth[(t, j)]),
                covariates: (0..covs.ncols()).map(|k| covs[(t, k)]).collect(),
            });
        }
    }
    let names: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let panel = PanelDataset::new(names, records).unwrap();

    let schema = CovariateSchema::all_interacting(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect()).unwrap();
    let window = Window::new(0, n_train as i64).unwrap();
    let obs = fit_inverse_regression(&panel, &layout, window, &schema).unwrap();
    let rc = fit_regression_calibration(&panel, &layout, window, &schema).unwrap();

    let cfg_nugget = FilterConfig {
        mle: MleConfig { family: KernelFamily::Exponential, fit_nugget: true, fixed_phi: None },
        params_override: None,
    };
    let mut sq = [0.0f64; 5];
    let mut n_pts = 0usize;
    for t in n_train..n_times {
        let slice = aircal::geo::build_time_slice(&panel, &layout, t as i64).unwrap();
        let (res_mle, _) = filter_slice(&slice, &obs, &FilterConfig::default()).unwrap();
        let (res_nug, p_nug) = filter_slice(&slice, &obs, &cfg_nugget).unwrap();
        fitted[0] += p_nug.kernel.sigma2 / n_test as f64;
        fitted[1] += p_nug.kernel.phi / n_test as f64;
        fitted[2] += p_nug.kernel.nugget / n_test as f64;
        let stripped = SpatialParams {
            mu: p_nug.mu,
            kernel: KernelSpec::new(KernelFamily::Exponential, p_nug.kernel.sigma2, p_nug.kernel.phi, 0.0).unwrap(),
        };
        let res_eiv = filter_time_point(&slice, &obs, &stripped).unwrap();
        let true_params = SpatialParams { mu, kernel: spec.clone() };
        let cfg_true = FilterConfig { mle: MleConfig::default(), params_override: Some(true_params) };
        let (res_true, _) = filter_slice(&slice, &obs, &cfg_true).unwrap();

        for (i, id) in slice.b_ids.iter().enumerate() {
            let j = layout.sites().iter().position(|s| &s.id == id).unwrap();
            let x = truth[(t, j)];
            let z: Vec<f64> = slice.z_b.row(i).iter().copied().collect();
            let (rc_pred, _) = predict_regcal(&rc, slice.y_b[i], &z).unwrap();
            sq[0] += (res_mle.mean[i] - x).powi(2);
            sq[1] += (res_true.mean[i] - x).powi(2);
            sq[2] += (rc_pred - x).powi(2);
            sq[3] += (res_nug.mean[i] - x).powi(2);
            sq[4] += (res_eiv.mean[i] - x).powi(2);
            n_pts += 1;
        }
    }
    sq.map(|s| (s / n_pts as f64).sqrt())
}

#[test]
fn probe_filter_vs_regcal() {
    println!("beta1  sigma2   regcal    mle/rc  true/rc  nugget/rc  eiv/rc   | fitted s2/phi/nug");
    for beta1 in [1.0, 0.8] {
        for sigma2 in [5.0, 15.0] {
            let mut acc = [0.0f64; 5];
            let mut fitted = [0.0f64; 3];
            for seed in [99u64, 500, 901] {
                let r = run_case(beta1, sigma2, seed, &mut fitted);
                for k in 0..5 {
                    acc[k] += r[k] * r[k] / 3.0;
                }
            }
            let r = acc.map(f64::sqrt);
            println!(
                "{beta1:5.2} {sigma2:7.1} {:8.4} {:8.3} {:8.3} {:9.3} {:8.3}  | {:6.2} {:5.2} {:5.2}",
                r[2],
                r[0] / r[2],
                r[1] / r[2],
                r[3] / r[2],
                r[4] / r[2],
                fitted[0] / 3.0,
                fitted[1] / 3.0,
                fitted[2] / 3.0
            );
        }
    }
}
