//! Scoring: RMSE variants, AQI false-negative rate, interval coverage and
//! width, residual diagnostics, and distance-binned error profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::AQI_MODERATE;

/// Distance bins for error-by-distance profiles (unit-square geometry, so
/// nearest-reference distances top out below 1.5).
pub const BIN_EDGES: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5];

/// Kahan compensated accumulator; keeps aggregation independent of the
/// order replicates finish in.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum
    }
}

/// RMSE restricted to one distance-from-reference band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    /// Absent when the band holds no evaluation points.
    pub rmse: Option<f64>,
    pub n: usize,
}

/// Scores for one method on one (or an average over many) datasets.
///
/// Optional fields are absent rather than zero when undefined: no moderate
/// observations means no tail RMSE and no false-negative rate, a method
/// without intervals has no coverage, and a constant truth has no residual
/// correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_overall: f64,
    /// RMSE over points whose true concentration exceeds the moderate
    /// threshold.
    pub rmse_moderate: Option<f64>,
    /// Fraction of truly moderate-or-worse points predicted below the
    /// threshold.
    pub fnr: Option<f64>,
    pub coverage95: Option<f64>,
    pub ci_width_mean: Option<f64>,
    /// Pearson correlation between prediction error and truth; the
    /// underestimation signature of forward calibration shows up here as a
    /// clearly negative value.
    pub residual_truth_correlation: Option<f64>,
    pub rmse_by_distance: Vec<DistanceBin>,
    pub runtime_seconds: f64,
    pub n_points: usize,
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let mut sab = Kahan::default();
    let mut saa = Kahan::default();
    let mut sbb = Kahan::default();
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab.add(da * db);
        saa.add(da * da);
        sbb.add(db * db);
    }
    let denom = (saa.total() * sbb.total()).sqrt();
    if denom > 0.0 {
        Some(sab.total() / denom)
    } else {
        None
    }
}

fn rmse(pred: &[f64], truth: &[f64], keep: impl Fn(usize) -> bool) -> (Option<f64>, usize) {
    let mut s = Kahan::default();
    let mut n = 0usize;
    for i in 0..pred.len() {
        if keep(i) {
            let e = pred[i] - truth[i];
            s.add(e * e);
            n += 1;
        }
    }
    if n == 0 {
        (None, 0)
    } else {
        (Some((s.total() / n as f64).sqrt()), n)
    }
}

/// Score predictions against truth.
///
/// `intervals` are (lower, upper) bounds aligned with the predictions;
/// `distances` give each point's distance to its nearest reference site and
/// feed the binned profile. The moderate threshold is [`AQI_MODERATE`]:
/// the tail RMSE uses truth strictly above it, the false-negative rate
/// counts truth at-or-above it predicted below it.
pub fn compute_metrics(
    pred: &[f64],
    truth: &[f64],
    intervals: Option<(&[f64], &[f64])>,
    distances: Option<&[f64]>,
) -> Result<MetricsReport> {
    let n = pred.len();
    if n == 0 {
        return Err(Error::InvalidInput("no points to score".to_string()));
    }
    if truth.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} predictions against {} truth values",
            truth.len()
        )));
    }
    if let Some((lo, hi)) = intervals {
        if lo.len() != n || hi.len() != n {
            return Err(Error::InvalidInput(
                "interval bounds do not match predictions".to_string(),
            ));
        }
    }
    if let Some(d) = distances {
        if d.len() != n {
            return Err(Error::InvalidInput(
                "distances do not match predictions".to_string(),
            ));
        }
    }

    let (overall, _) = rmse(pred, truth, |_| true);
    let (moderate, _) = rmse(pred, truth, |i| truth[i] > AQI_MODERATE);

    let mut n_mod = 0usize;
    let mut n_missed = 0usize;
    for i in 0..n {
        if truth[i] >= AQI_MODERATE {
            n_mod += 1;
            if pred[i] < AQI_MODERATE {
                n_missed += 1;
            }
        }
    }
    let fnr = (n_mod > 0).then(|| n_missed as f64 / n_mod as f64);

    let (coverage95, ci_width_mean) = match intervals {
        Some((lo, hi)) => {
            let mut covered = 0usize;
            let mut width = Kahan::default();
            for i in 0..n {
                if lo[i] <= truth[i] && truth[i] <= hi[i] {
                    covered += 1;
                }
                width.add(hi[i] - lo[i]);
            }
            (
                Some(covered as f64 / n as f64),
                Some(width.total() / n as f64),
            )
        }
        None => (None, None),
    };

    let residuals: Vec<f64> = (0..n).map(|i| pred[i] - truth[i]).collect();
    let residual_truth_correlation = pearson(&residuals, truth);

    let rmse_by_distance = match distances {
        Some(d) => BIN_EDGES
            .windows(2)
            .map(|w| {
                let (r, cnt) = rmse(pred, truth, |i| w[0] <= d[i] && d[i] < w[1]);
                DistanceBin {
                    lo: w[0],
                    hi: w[1],
                    rmse: r,
                    n: cnt,
                }
            })
            .collect(),
        None => Vec::new(),
    };

    Ok(MetricsReport {
        rmse_overall: overall.expect("n > 0"),
        rmse_moderate: moderate,
        fnr,
        coverage95,
        ci_width_mean,
        residual_truth_correlation,
        rmse_by_distance,
        runtime_seconds: 0.0,
        n_points: n,
    })
}

fn mean_of(reports: &[&MetricsReport], f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
    let mut s = Kahan::default();
    let mut n = 0usize;
    for r in reports {
        if let Some(v) = f(r) {
            s.add(v);
            n += 1;
        }
    }
    (n > 0).then(|| s.total() / n as f64)
}

/// Replicate-level average: plain means of each score over the replicates
/// where it is defined, runtimes and point counts summed.
pub fn average_reports(reports: &[&MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let n_bins = reports[0].rmse_by_distance.len();
    let rmse_by_distance = (0..n_bins)
        .map(|b| {
            let per_rep: Vec<(f64, usize)> = reports
                .iter()
                .filter_map(|r| r.rmse_by_distance[b].rmse.map(|v| (v, r.rmse_by_distance[b].n)))
                .collect();
            let mut s = Kahan::default();
            for (v, _) in &per_rep {
                s.add(*v);
            }
            DistanceBin {
                lo: reports[0].rmse_by_distance[b].lo,
                hi: reports[0].rmse_by_distance[b].hi,
                rmse: (!per_rep.is_empty()).then(|| s.total() / per_rep.len() as f64),
                n: per_rep.iter().map(|(_, c)| c).sum(),
            }
        })
        .collect();

    let mut runtime = Kahan::default();
    let mut rmse_all = Kahan::default();
    for r in reports {
        runtime.add(r.runtime_seconds);
        rmse_all.add(r.rmse_overall);
    }

    Some(MetricsReport {
        rmse_overall: rmse_all.total() / reports.len() as f64,
        rmse_moderate: mean_of(reports, |r| r.rmse_moderate),
        fnr: mean_of(reports, |r| r.fnr),
        coverage95: mean_of(reports, |r| r.coverage95),
        ci_width_mean: mean_of(reports, |r| r.ci_width_mean),
        residual_truth_correlation: mean_of(reports, |r| r.residual_truth_correlation),
        rmse_by_distance,
        runtime_seconds: runtime.total(),
        n_points: reports.iter().map(|r| r.n_points).sum(),
    })
}
