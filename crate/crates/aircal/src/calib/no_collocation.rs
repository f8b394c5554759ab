//! Calibration without collocated sites: the low-cost reading field is
//! kriged from sensor locations to each reference site, and the regression
//! is trained on those kriged pseudo-pairs. Spatial smoothing attenuates the
//! fitted gain relative to truly collocated training, which is exactly the
//! effect this variant exists to quantify.

use nalgebra::DVector;

use super::{fit_records_inverse, fit_regcal_records, CovariateSchema, ObsModelFit, RegCalFit, TrainingRecord};
use crate::covariance::condition_gaussian;
use crate::error::{Error, Result};
use crate::filter::{mle_spatial_params, MleConfig};
use crate::geo::{Location, NetworkLayout, PanelDataset, SiteRole, Window};

/// Fewer sensor readings than this at a time point make kriging meaningless;
/// such time points are skipped.
const MIN_KRIGE_SOURCES: usize = 3;

/// Pseudo training pairs (kriged reading, reference value) at reference-only
/// sites, one per reference observation in the window. The reading field gets
/// its own per-time kernel fit before kriging.
pub fn kriged_training_records(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
    mle: &MleConfig,
) -> Result<Vec<TrainingRecord>> {
    if layout
        .sites()
        .iter()
        .any(|s| s.role == SiteRole::Collocated)
    {
        return Err(Error::InvalidInput(
            "layout has collocated sites; use fit_inverse_regression instead".to_string(),
        ));
    }
    let cols = schema.column_indices(panel.covariate_names())?;

    let mut out = Vec::new();
    let times: Vec<i64> = panel.times().filter(|&t| window.contains(t)).collect();
    for t in times {
        let mut src_locs: Vec<Location> = Vec::new();
        let mut src_vals: Vec<f64> = Vec::new();
        let mut targets: Vec<(Location, f64, Vec<f64>)> = Vec::new();
        for r in panel.records_at(t) {
            let Some(site) = layout.get(&r.site_id) else {
                continue;
            };
            if site.role.has_lowcost() {
                if let Some(y) = r.y {
                    src_locs.push(site.loc);
                    src_vals.push(y);
                }
            }
            if site.role.has_reference() {
                if let Some(x) = r.x_ref {
                    let z = cols.iter().map(|&c| r.covariates[c]).collect();
                    targets.push((site.loc, x, z));
                }
            }
        }
        if targets.is_empty() || src_locs.len() < MIN_KRIGE_SOURCES {
            continue;
        }

        let vals = DVector::from_vec(src_vals);
        let params = match mle_spatial_params(&vals, &src_locs, mle) {
            Ok(fit) => fit.params,
            // a stalled optimizer still yields its best point; good enough
            // for a smoothing interpolant
            Err(Error::MleNotConverged { best, .. }) => *best,
            Err(e) => return Err(e),
        };

        let target_locs: Vec<Location> = targets.iter().map(|(l, _, _)| *l).collect();
        let cond = condition_gaussian(&params.kernel, params.mu, &target_locs, &src_locs, &vals)?;
        for (k, (_, x, z)) in targets.into_iter().enumerate() {
            out.push(TrainingRecord {
                y: cond.mean[k],
                x,
                z,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoReferenceData(
            ": no reference observations pairable with kriged readings in window".to_string(),
        ));
    }
    Ok(out)
}

/// Observation-model fit on kriged pseudo-pairs.
pub fn fit_obs_no_collocation(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
    mle: &MleConfig,
) -> Result<ObsModelFit> {
    let records = kriged_training_records(panel, layout, window, schema, mle)?;
    fit_records_inverse(&records, schema, window)
}

/// Regression-calibration fit on kriged pseudo-pairs.
pub fn fit_regcal_no_collocation(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    window: Window,
    schema: &CovariateSchema,
    mle: &MleConfig,
) -> Result<RegCalFit> {
    let records = kriged_training_records(panel, layout, window, schema, mle)?;
    fit_regcal_records(&records, schema, window)
}
