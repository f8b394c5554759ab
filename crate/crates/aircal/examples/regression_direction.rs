//! Why the observation model is fitted with the reading on the left-hand
//! side. Regressing truth on readings (the forward direction) shrinks
//! predictions toward the mean, so the residuals correlate negatively with
//! the truth: peaks are systematically underestimated. Inverting the
//! reading-on-truth fit leaves no such trend.

use aircal::sim::run_proposition_suite;

fn main() -> aircal::Result<()> {
    println!("corr(residual, truth) on 20000 collocated records:\n");
    println!("sigma2   forward (regcal)   inverted");
    for sigma2 in [5.0, 10.0, 15.0, 20.0] {
        let r = run_proposition_suite(20_000, sigma2, 2.0, 17)?;
        println!(
            "{sigma2:6} {:17.4} {:10.4}",
            r.regcal_residual_truth_corr, r.inverse_residual_truth_corr
        );
    }
    println!("\nthe forward column is the attenuation bias, strongest when");
    println!("sensor noise is large relative to the field variance; the");
    println!("inverted model stays centered throughout.");
    Ok(())
}
