//! Empirical semivariogram of a simulated field against the generating
//! kernel. With 250 sites the Matheron estimator should track the
//! theoretical curve sigma2 * (1 - exp(-phi d)) closely in the well-populated
//! bins.

use aircal::covariance::{empirical_variogram, KernelFamily, KernelSpec};
use aircal::geo::Location;
use aircal::sim::simulate_gp_truth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> aircal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let locs: Vec<Location> = (0..250)
        .map(|_| Location::new(rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();

    let sigma2 = 10.0;
    let phi = 4.0;
    let spec = KernelSpec::new(KernelFamily::Exponential, sigma2, phi, 0.0)?;
    let field = simulate_gp_truth(&locs, &spec, 7.0, 1, 11)?;
    let vals: Vec<f64> = field.row(0).iter().copied().collect();

    let bins = empirical_variogram(&locs, &vals, 12)?;
    println!("distance   empirical   theoretical   pairs");
    for b in &bins {
        let theo = sigma2 * (1.0 - (-phi * b.distance).exp());
        match b.semivariance {
            Some(g) => println!("{:8.3}  {:10.3}  {:12.3}  {:6}", b.distance, g, theo, b.pairs),
            None => println!("{:8.3}  {:>10}  {:12.3}  {:6}", b.distance, "-", theo, b.pairs),
        }
    }
    Ok(())
}
