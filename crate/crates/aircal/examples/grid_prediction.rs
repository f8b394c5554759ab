//! Kriges the filtered field onto a lattice covering the unit square and
//! prints it as a coarse map, one time slice of the toy dataset.

use std::path::Path;

use aircal::calib::{fit_inverse_regression, CovariateSchema};
use aircal::filter::{filter_slice, predict_grid, FilterConfig};
use aircal::geo::{build_time_slice, Location, Window};
use aircal::io::{read_network_csv, read_observations_csv};
use aircal::sim::COVARIATE_NAMES;

const SIDE: usize = 8;

fn main() -> aircal::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let layout = read_network_csv(&dir.join("toy_network.csv"))?;
    let panel = read_observations_csv(&dir.join("toy_observations.csv"), None)?;
    panel.validate_roles(&layout)?;

    let schema = CovariateSchema::all_interacting(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect())?;
    let fit = fit_inverse_regression(&panel, &layout, Window::new(0, 30)?, &schema)?;
    let slice = build_time_slice(&panel, &layout, 5)?;
    let (res, params) = filter_slice(&slice, &fit, &FilterConfig::default())?;

    let mut grid = Vec::with_capacity(SIDE * SIDE);
    for row in 0..SIDE {
        for col in 0..SIDE {
            let step = 1.0 / (SIDE as f64 - 1.0);
            grid.push(Location::new(col as f64 * step, row as f64 * step));
        }
    }
    let pred = predict_grid(&params, &slice, &res, &grid)?;

    println!("posterior mean field at t=5 (y runs upward):\n");
    for row in (0..SIDE).rev() {
        let cells: Vec<String> = (0..SIDE)
            .map(|col| format!("{:5.1}", pred.mean[row * SIDE + col]))
            .collect();
        println!("  {}", cells.join(" "));
    }
    println!("\nprediction sd (widens away from the sites):\n");
    for row in (0..SIDE).rev() {
        let cells: Vec<String> = (0..SIDE)
            .map(|col| format!("{:5.2}", pred.var[row * SIDE + col].max(0.0).sqrt()))
            .collect();
        println!("  {}", cells.join(" "));
    }
    if pred.jitter_escalations > 0 {
        println!("\n({} jitter escalations during the solve)", pred.jitter_escalations);
    }
    Ok(())
}
