//! A reduced run of the core benchmark: simulate a Gaussian field over a
//! sensor network, calibrate with each method, and score on held-out points.
//! The full study uses `ScenarioConfig::desk` or `::paper`; this trims the
//! sizes so the example finishes in seconds.

use aircal::sim::{run_scenario, Method, Scenario, ScenarioConfig};

fn main() -> aircal::Result<()> {
    let mut cfg = ScenarioConfig::desk(Scenario::S1a, 15.0, 1);
    cfg.n_replicates = 3;
    cfg.n_train = 150;
    cfg.n_test = 25;
    cfg.n_lowcost = 30;

    let methods = [Method::GpFilter, Method::RegCal, Method::Inverse, Method::Pareto];
    let report = run_scenario(&cfg, &methods, 1)?;
    for (rep, err) in &report.failed {
        eprintln!("replicate {rep} failed: {err}");
    }

    println!(
        "scenario {} | sigma2 {} | {} replicates of {} train / {} test\n",
        report.scenario.label(),
        report.sigma2,
        report.n_replicates,
        cfg.n_train,
        cfg.n_test
    );
    println!("method          rmse    rmse>12   fnr    cover95  width   res-corr   secs");
    for mr in &report.reports {
        let Some(m) = &mr.metrics else { continue };
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:7.3}"),
            None => format!("{:>7}", "-"),
        };
        println!(
            "{:14} {:7.3} {} {} {} {} {} {:7.2}",
            mr.method.label(),
            m.rmse_overall,
            fmt(m.rmse_moderate),
            fmt(m.fnr),
            fmt(m.coverage95),
            fmt(m.ci_width_mean),
            fmt(m.residual_truth_correlation),
            m.runtime_seconds
        );
    }
    Ok(())
}
