//! Regenerates the small dataset shipped in `data/`: a 10-site network
//! (one collocated station, eight sensors, one reference-only station)
//! observed over 30 time points.

use std::path::Path;

use aircal::covariance::{KernelFamily, KernelSpec};
use aircal::geo::{Location, NetworkLayout, PanelDataset, PanelRecord, Site, SiteRole};
use aircal::io::{write_network_csv, write_observations_csv};
use aircal::sim::{simulate_covariates, simulate_gp_truth, simulate_lowcost, GenCoefficients, COVARIATE_NAMES};

const N_TIMES: usize = 30;
const SEED: u64 = 42;

fn main() -> aircal::Result<()> {
    let mut sites = vec![Site {
        id: "alpha".to_string(),
        loc: Location::new(0.20, 0.30),
        role: SiteRole::Collocated,
    }];
    let sensor_locs = [
        (0.10, 0.15),
        (0.35, 0.20),
        (0.55, 0.35),
        (0.30, 0.55),
        (0.65, 0.60),
        (0.85, 0.40),
        (0.50, 0.80),
        (0.15, 0.75),
    ];
    for (i, (x, y)) in sensor_locs.iter().enumerate() {
        sites.push(Site {
            id: format!("s{}", i + 1),
            loc: Location::new(*x, *y),
            role: SiteRole::LowCostOnly,
        });
    }
    sites.push(Site {
        id: "omega".to_string(),
        loc: Location::new(0.80, 0.70),
        role: SiteRole::ReferenceOnly,
    });
    let layout = NetworkLayout::new(sites)?;

    let locs: Vec<Location> = layout.sites().iter().map(|s| s.loc).collect();
    let spec = KernelSpec::new(KernelFamily::Exponential, 10.0, 4.0, 0.0)?;
    let truth = simulate_gp_truth(&locs, &spec, 7.0, N_TIMES, SEED)?;
    let covs = simulate_covariates(N_TIMES, SEED + 1);
    let y = simulate_lowcost(&truth, &covs, &GenCoefficients::default(), 2.0, SEED + 2)?;

    let mut records = Vec::new();
    for t in 0..N_TIMES {
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
    let names = COVARIATE_NAMES.iter().map(|n| n.to_string()).collect();
    let panel = PanelDataset::new(names, records)?;

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir)?;
    write_network_csv(&dir.join("toy_network.csv"), &layout)?;
    write_observations_csv(&dir.join("toy_observations.csv"), &panel)?;
    println!(
        "wrote {} sites and {} observation rows to {}",
        layout.sites().len(),
        panel.records().len(),
        dir.display()
    );
    Ok(())
}
