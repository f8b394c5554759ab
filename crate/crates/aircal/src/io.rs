//! On-disk formats: network and observation CSVs, prediction outputs, the
//! versioned model JSON, and the JSON run configuration.
//!
//! Numeric CSV cells are written with 17 significant digits, so every file
//! round-trips bit-exactly and two runs with the same configuration and
//! seed produce byte-identical output. Empty cells mean "absent"
//! throughout.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::McmcConfig;
use crate::calib::{CovariateSchema, ObsModelFit, ParetoFit, RegCalFit};
use crate::covariance::{KernelFamily, VariogramBin};
use crate::error::{Error, Result};
use crate::geo::{
    Location, NetworkLayout, PanelDataset, PanelRecord, Site, SiteRole, Window,
};
use crate::sim::{DistanceBin, Method, MetricsReport, ScenarioReport, BIN_EDGES};

/// Version stamped into every model JSON this build writes.
pub const MODEL_FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MODEL_MAJOR: u32 = 1;

/// 17 significant digits: enough to reconstruct the exact f64.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::CsvFormat {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Convert a csv-crate error, keeping its line number when it has one.
fn from_csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    csv_err(path, line, e.to_string())
}

fn parse_f64(path: &Path, line: usize, col: &str, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| csv_err(path, line, format!("non-numeric {col} {cell:?}")))
}

fn parse_opt_f64(path: &Path, line: usize, col: &str, cell: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(path, line, col, cell).map(Some)
    }
}

fn parse_i64(path: &Path, line: usize, col: &str, cell: &str) -> Result<i64> {
    cell.trim()
        .parse::<i64>()
        .map_err(|_| csv_err(path, line, format!("non-integer {col} {cell:?}")))
}

fn parse_usize(path: &Path, line: usize, col: &str, cell: &str) -> Result<usize> {
    cell.trim()
        .parse::<usize>()
        .map_err(|_| csv_err(path, line, format!("non-integer {col} {cell:?}")))
}

/// Read all records up front so errors can carry 1-based line numbers
/// (header included).
fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| from_csv_error(path, e))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| from_csv_error(path, e))?;
        let line = rec
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows.len() + 1);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn check_header(path: &Path, rows: &[(usize, Vec<String>)], expected: &[&str]) -> Result<()> {
    let Some((line, header)) = rows.first() else {
        return Err(csv_err(path, 1, "empty file"));
    };
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(csv_err(
            path,
            *line,
            format!(
                "bad header {:?}; expected {:?}",
                header.join(","),
                expected.join(",")
            ),
        ));
    }
    Ok(())
}

fn check_width(path: &Path, line: usize, row: &[String], want: usize) -> Result<()> {
    if row.len() != want {
        return Err(csv_err(
            path,
            line,
            format!("expected {want} fields, found {}", row.len()),
        ));
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| from_csv_error(path, e))
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(Error::Io)
}

fn write_row(path: &Path, w: &mut csv::Writer<fs::File>, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| from_csv_error(path, e))
}

// ---------------------------------------------------------------------------
// network CSV: site_id,x,y,role

/// Read a monitoring-network file (`site_id,x,y,role`, roles A–D).
pub fn read_network_csv(path: &Path) -> Result<NetworkLayout> {
    let rows = read_rows(path)?;
    check_header(path, &rows, &["site_id", "x", "y", "role"])?;
    if rows.len() == 1 {
        return Err(csv_err(path, rows[0].0, "no sites"));
    }
    let mut sites = Vec::with_capacity(rows.len() - 1);
    let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, 4)?;
        let id = row[0].trim();
        if id.is_empty() {
            return Err(csv_err(path, *line, "empty site_id"));
        }
        if !seen.insert(id) {
            return Err(csv_err(path, *line, format!("duplicate site_id {id:?}")));
        }
        let x = parse_f64(path, *line, "coordinate", &row[1])?;
        let y = parse_f64(path, *line, "coordinate", &row[2])?;
        let role_str = row[3].trim();
        let role = role_str
            .chars()
            .next()
            .filter(|_| role_str.len() == 1)
            .and_then(SiteRole::from_letter)
            .ok_or_else(|| {
                csv_err(
                    path,
                    *line,
                    format!("unknown role {role_str:?}; expected A, B, C, or D"),
                )
            })?;
        sites.push(Site {
            id: id.to_string(),
            loc: Location::new(x, y),
            role,
        });
    }
    NetworkLayout::new(sites)
}

pub fn write_network_csv(path: &Path, layout: &NetworkLayout) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, &strs(&["site_id", "x", "y", "role"]))?;
    for s in layout.sites() {
        write_row(
            path,
            &mut w,
            &[
                s.id.clone(),
                fmt_float(s.loc.x),
                fmt_float(s.loc.y),
                s.role.letter().to_string(),
            ],
        )?;
    }
    finish(w)
}

fn strs(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// observations CSV: site_id,t,y,x_ref,<covariates...>

/// Read a panel of observations (`site_id,t,y,x_ref,<covariates…>`).
///
/// With a schema, the covariate columns must match its names exactly; with
/// `None`, whatever covariate columns the header declares are accepted.
/// Empty `y`/`x_ref` cells are absent values; covariate cells must be
/// filled.
pub fn read_observations_csv(
    path: &Path,
    schema: Option<&CovariateSchema>,
) -> Result<PanelDataset> {
    let rows = read_rows(path)?;
    let Some((header_line, header)) = rows.first() else {
        return Err(csv_err(path, 1, "empty file"));
    };
    if header.len() < 4 || header[..4] != ["site_id", "t", "y", "x_ref"] {
        return Err(csv_err(
            path,
            *header_line,
            format!(
                "bad header {:?}; expected site_id,t,y,x_ref,<covariates…>",
                header.join(",")
            ),
        ));
    }
    let cov_names: Vec<String> = header[4..].to_vec();
    if let Some(schema) = schema {
        if cov_names != schema.names() {
            return Err(csv_err(
                path,
                *header_line,
                format!(
                    "covariate columns [{}] do not match the expected schema [{}]",
                    cov_names.join(", "),
                    schema.names().join(", ")
                ),
            ));
        }
    }
    let width = 4 + cov_names.len();
    let mut records = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, width)?;
        let site_id = row[0].trim();
        if site_id.is_empty() {
            return Err(csv_err(path, *line, "empty site_id"));
        }
        let t = parse_i64(path, *line, "t", &row[1])?;
        let y = parse_opt_f64(path, *line, "y", &row[2])?;
        let x_ref = parse_opt_f64(path, *line, "x_ref", &row[3])?;
        let mut covariates = Vec::with_capacity(cov_names.len());
        for (j, cell) in row[4..].iter().enumerate() {
            if cell.trim().is_empty() {
                return Err(csv_err(
                    path,
                    *line,
                    format!("empty covariate cell in column {:?}", cov_names[j]),
                ));
            }
            covariates.push(parse_f64(path, *line, "covariate", cell)?);
        }
        records.push(PanelRecord {
            site_id: site_id.to_string(),
            t,
            y,
            x_ref,
            covariates,
        });
    }
    PanelDataset::new(cov_names, records)
}

pub fn write_observations_csv(path: &Path, panel: &PanelDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = strs(&["site_id", "t", "y", "x_ref"]);
    header.extend(panel.covariate_names().iter().cloned());
    write_row(path, &mut w, &header)?;
    for r in panel.records() {
        let mut row = vec![
            r.site_id.clone(),
            r.t.to_string(),
            fmt_opt(r.y),
            fmt_opt(r.x_ref),
        ];
        row.extend(r.covariates.iter().map(|v| fmt_float(*v)));
        write_row(path, &mut w, &row)?;
    }
    finish(w)
}

// ---------------------------------------------------------------------------
// calibration output CSV: site_id,t,xhat,sd,lower,upper,flag

/// One calibrated estimate. `sd`/`lower`/`upper` are absent for methods
/// that produce no uncertainty (raw inversion, the exceedance model).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub site_id: String,
    pub t: i64,
    pub xhat: f64,
    pub sd: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// False when the fitted gain at this site and time was too close to
    /// zero for a trustworthy inversion.
    pub stable: bool,
}

const CALIBRATION_HEADER: [&str; 7] = ["site_id", "t", "xhat", "sd", "lower", "upper", "flag"];

pub fn write_calibration_csv(path: &Path, rows: &[CalibrationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, &strs(&CALIBRATION_HEADER))?;
    for r in rows {
        write_row(
            path,
            &mut w,
            &[
                r.site_id.clone(),
                r.t.to_string(),
                fmt_float(r.xhat),
                fmt_opt(r.sd),
                fmt_opt(r.lower),
                fmt_opt(r.upper),
                if r.stable { "ok" } else { "unstable" }.to_string(),
            ],
        )?;
    }
    finish(w)
}

pub fn read_calibration_csv(path: &Path) -> Result<Vec<CalibrationRow>> {
    let rows = read_rows(path)?;
    check_header(path, &rows, &CALIBRATION_HEADER)?;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, 7)?;
        let stable = match row[6].trim() {
            "ok" => true,
            "unstable" => false,
            other => {
                return Err(csv_err(
                    path,
                    *line,
                    format!("unknown flag {other:?}; expected ok or unstable"),
                ))
            }
        };
        out.push(CalibrationRow {
            site_id: row[0].trim().to_string(),
            t: parse_i64(path, *line, "t", &row[1])?,
            xhat: parse_f64(path, *line, "xhat", &row[2])?,
            sd: parse_opt_f64(path, *line, "sd", &row[3])?,
            lower: parse_opt_f64(path, *line, "lower", &row[4])?,
            upper: parse_opt_f64(path, *line, "upper", &row[5])?,
            stable,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// grid prediction CSV: x,y,t,mean,sd,lower,upper

/// One predicted field value at a grid location and time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub t: i64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

const GRID_HEADER: [&str; 7] = ["x", "y", "t", "mean", "sd", "lower", "upper"];

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, &strs(&GRID_HEADER))?;
    for r in rows {
        write_row(
            path,
            &mut w,
            &[
                fmt_float(r.x),
                fmt_float(r.y),
                r.t.to_string(),
                fmt_float(r.mean),
                fmt_float(r.sd),
                fmt_float(r.lower),
                fmt_float(r.upper),
            ],
        )?;
    }
    finish(w)
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    let rows = read_rows(path)?;
    check_header(path, &rows, &GRID_HEADER)?;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, 7)?;
        out.push(GridRow {
            x: parse_f64(path, *line, "x", &row[0])?,
            y: parse_f64(path, *line, "y", &row[1])?,
            t: parse_i64(path, *line, "t", &row[2])?,
            mean: parse_f64(path, *line, "mean", &row[3])?,
            sd: parse_f64(path, *line, "sd", &row[4])?,
            lower: parse_f64(path, *line, "lower", &row[5])?,
            upper: parse_f64(path, *line, "upper", &row[6])?,
        });
    }
    Ok(out)
}

/// Read plain grid locations (`x,y` header), for prediction targets not
/// listed as D-sites in the network file.
pub fn read_grid_points(path: &Path) -> Result<Vec<Location>> {
    let rows = read_rows(path)?;
    check_header(path, &rows, &["x", "y"])?;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, 2)?;
        let loc = Location::new(
            parse_f64(path, *line, "x", &row[0])?,
            parse_f64(path, *line, "y", &row[1])?,
        );
        if !loc.is_finite() {
            return Err(csv_err(path, *line, "non-finite grid point"));
        }
        out.push(loc);
    }
    if out.is_empty() {
        return Err(csv_err(path, rows[0].0, "no grid points"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// variogram CSV: distance,semivariance,pairs

const VARIOGRAM_HEADER: [&str; 3] = ["distance", "semivariance", "pairs"];

pub fn write_variogram_csv(path: &Path, bins: &[VariogramBin]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, &strs(&VARIOGRAM_HEADER))?;
    for b in bins {
        write_row(
            path,
            &mut w,
            &[
                fmt_float(b.distance),
                fmt_opt(b.semivariance),
                b.pairs.to_string(),
            ],
        )?;
    }
    finish(w)
}

pub fn read_variogram_csv(path: &Path) -> Result<Vec<VariogramBin>> {
    let rows = read_rows(path)?;
    check_header(path, &rows, &VARIOGRAM_HEADER)?;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, 3)?;
        out.push(VariogramBin {
            distance: parse_f64(path, *line, "distance", &row[0])?,
            semivariance: parse_opt_f64(path, *line, "semivariance", &row[1])?,
            pairs: parse_usize(path, *line, "pairs", &row[2])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// metrics CSV: one row per method

/// One metrics row, as written by `simulate` and the `metrics` command.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub report: MetricsReport,
    /// Filled by the network-design studies.
    pub base_rmse_overall: Option<f64>,
    pub rmse_change_pct: Option<f64>,
    pub fnr_change_pct: Option<f64>,
}

fn metrics_header() -> Vec<String> {
    let mut h = strs(&[
        "method",
        "n_points",
        "rmse_overall",
        "rmse_moderate",
        "fnr",
        "coverage95",
        "ci_width_mean",
        "residual_truth_correlation",
        "runtime_seconds",
    ]);
    for w in BIN_EDGES.windows(2) {
        h.push(format!("rmse_{:.2}_{:.2}", w[0], w[1]));
        h.push(format!("n_{:.2}_{:.2}", w[0], w[1]));
    }
    h.extend(strs(&[
        "base_rmse_overall",
        "rmse_change_pct",
        "fnr_change_pct",
    ]));
    h
}

/// Flatten a scenario report into writable rows. Methods whose every
/// replicate failed carry no metrics and are skipped.
pub fn metrics_rows(report: &ScenarioReport) -> Vec<MetricsRow> {
    report
        .reports
        .iter()
        .filter_map(|mr| {
            mr.metrics.as_ref().map(|m| MetricsRow {
                method: mr.method.label().to_string(),
                report: m.clone(),
                base_rmse_overall: mr.base_design.as_ref().map(|b| b.rmse_overall),
                rmse_change_pct: mr.rmse_change_pct,
                fnr_change_pct: mr.fnr_change_pct,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, &metrics_header())?;
    for r in rows {
        let m = &r.report;
        let mut row = vec![
            r.method.clone(),
            m.n_points.to_string(),
            fmt_float(m.rmse_overall),
            fmt_opt(m.rmse_moderate),
            fmt_opt(m.fnr),
            fmt_opt(m.coverage95),
            fmt_opt(m.ci_width_mean),
            fmt_opt(m.residual_truth_correlation),
            fmt_float(m.runtime_seconds),
        ];
        if m.rmse_by_distance.len() != BIN_EDGES.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "metrics report has {} distance bins; the file format fixes {}",
                m.rmse_by_distance.len(),
                BIN_EDGES.len() - 1
            )));
        }
        for bin in &m.rmse_by_distance {
            row.push(fmt_opt(bin.rmse));
            row.push(bin.n.to_string());
        }
        row.push(fmt_opt(r.base_rmse_overall));
        row.push(fmt_opt(r.rmse_change_pct));
        row.push(fmt_opt(r.fnr_change_pct));
        write_row(path, &mut w, &row)?;
    }
    finish(w)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let rows = read_rows(path)?;
    let expected = metrics_header();
    let expected_refs: Vec<&str> = expected.iter().map(String::as_str).collect();
    check_header(path, &rows, &expected_refs)?;
    let n_bins = BIN_EDGES.len() - 1;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (line, row) in &rows[1..] {
        check_width(path, *line, row, expected.len())?;
        let mut bins = Vec::with_capacity(n_bins);
        for (k, w) in BIN_EDGES.windows(2).enumerate() {
            bins.push(DistanceBin {
                lo: w[0],
                hi: w[1],
                rmse: parse_opt_f64(path, *line, "bin rmse", &row[9 + 2 * k])?,
                n: parse_usize(path, *line, "bin count", &row[10 + 2 * k])?,
            });
        }
        let tail = 9 + 2 * n_bins;
        out.push(MetricsRow {
            method: row[0].trim().to_string(),
            report: MetricsReport {
                n_points: parse_usize(path, *line, "n_points", &row[1])?,
                rmse_overall: parse_f64(path, *line, "rmse_overall", &row[2])?,
                rmse_moderate: parse_opt_f64(path, *line, "rmse_moderate", &row[3])?,
                fnr: parse_opt_f64(path, *line, "fnr", &row[4])?,
                coverage95: parse_opt_f64(path, *line, "coverage95", &row[5])?,
                ci_width_mean: parse_opt_f64(path, *line, "ci_width_mean", &row[6])?,
                residual_truth_correlation: parse_opt_f64(
                    path,
                    *line,
                    "residual_truth_correlation",
                    &row[7],
                )?,
                runtime_seconds: parse_f64(path, *line, "runtime_seconds", &row[8])?,
                rmse_by_distance: bins,
            },
            base_rmse_overall: parse_opt_f64(path, *line, "base_rmse_overall", &row[tail])?,
            rmse_change_pct: parse_opt_f64(path, *line, "rmse_change_pct", &row[tail + 1])?,
            fnr_change_pct: parse_opt_f64(path, *line, "fnr_change_pct", &row[tail + 2])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// model JSON

/// A fitted model as stored on disk.
#[derive(Debug, Clone)]
pub enum ModelFile {
    Observation(ObsModelFit),
    Regcal(RegCalFit),
    Pareto(ParetoFit),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Observation(_) => "observation",
            ModelFile::Regcal(_) => "regcal",
            ModelFile::Pareto(_) => "pareto",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: String,
    #[serde(flatten)]
    body: Body,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model_type", content = "model", rename_all = "kebab-case")]
enum Body {
    Observation(RegressionJson),
    Regcal(RegressionJson),
    Pareto(ParetoJson),
}

#[derive(Serialize, Deserialize)]
struct RegressionJson {
    beta0: f64,
    beta1: f64,
    beta2: Vec<f64>,
    beta3: Vec<f64>,
    tau2: f64,
    covariates: Vec<String>,
    interacting: Vec<bool>,
    n_train: usize,
    window: Window,
    /// Row-major coefficient covariance in design-column order.
    coef_cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ParetoJson {
    gamma: Vec<f64>,
    xi: f64,
    threshold: f64,
    covariates: Vec<String>,
    interacting: Vec<bool>,
    is_indicator: Vec<bool>,
    n_exceedances: usize,
    loglik: f64,
}

macro_rules! regression_json_conv {
    ($fit:ident) => {
        impl From<&$fit> for RegressionJson {
            fn from(f: &$fit) -> Self {
                RegressionJson {
                    beta0: f.beta0,
                    beta1: f.beta1,
                    beta2: f.beta2.iter().copied().collect(),
                    beta3: f.beta3.iter().copied().collect(),
                    tau2: f.tau2,
                    covariates: f.schema.names().to_vec(),
                    interacting: f.schema.interacts().to_vec(),
                    n_train: f.n_train,
                    window: f.window,
                    coef_cov: f
                        .coef_cov
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                }
            }
        }

        impl TryFrom<RegressionJson> for $fit {
            type Error = Error;

            fn try_from(j: RegressionJson) -> Result<Self> {
                let schema = CovariateSchema::new(j.covariates, j.interacting)?;
                let window = Window::new(j.window.t0, j.window.t1)?;
                let dim = 2 + schema.q() + schema.interacts().iter().filter(|b| **b).count();
                if j.beta2.len() != schema.q() || j.beta3.len() != schema.q() {
                    return Err(Error::InvalidInput(
                        "model coefficients do not match the covariate schema".to_string(),
                    ));
                }
                if j.coef_cov.len() != dim || j.coef_cov.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidInput(format!(
                        "coefficient covariance must be {dim}×{dim}"
                    )));
                }
                Ok($fit {
                    beta0: j.beta0,
                    beta1: j.beta1,
                    beta2: DVector::from_vec(j.beta2),
                    beta3: DVector::from_vec(j.beta3),
                    tau2: j.tau2,
                    schema,
                    n_train: j.n_train,
                    window,
                    coef_cov: DMatrix::from_fn(dim, dim, |i, k| j.coef_cov[i][k]),
                })
            }
        }
    };
}

regression_json_conv!(ObsModelFit);
regression_json_conv!(RegCalFit);

impl From<&ParetoFit> for ParetoJson {
    fn from(f: &ParetoFit) -> Self {
        ParetoJson {
            gamma: f.gamma.iter().copied().collect(),
            xi: f.xi,
            threshold: f.threshold,
            covariates: f.schema.names().to_vec(),
            interacting: f.schema.interacts().to_vec(),
            is_indicator: f.is_indicator.clone(),
            n_exceedances: f.n_exceedances,
            loglik: f.loglik,
        }
    }
}

impl TryFrom<ParetoJson> for ParetoFit {
    type Error = Error;

    fn try_from(j: ParetoJson) -> Result<Self> {
        let schema = CovariateSchema::new(j.covariates, j.interacting)?;
        if j.is_indicator.len() != schema.q() {
            return Err(Error::InvalidInput(
                "indicator flags do not match the covariate schema".to_string(),
            ));
        }
        if j.gamma.len() != 3 + 2 * schema.q() {
            return Err(Error::InvalidInput(format!(
                "exceedance model needs {} scale/shape coefficients, found {}",
                3 + 2 * schema.q(),
                j.gamma.len()
            )));
        }
        Ok(ParetoFit {
            gamma: DVector::from_vec(j.gamma),
            xi: j.xi,
            threshold: j.threshold,
            schema,
            is_indicator: j.is_indicator,
            n_exceedances: j.n_exceedances,
            loglik: j.loglik,
        })
    }
}

pub fn write_model_json(path: &Path, model: &ModelFile) -> Result<()> {
    let body = match model {
        ModelFile::Observation(f) => Body::Observation(f.into()),
        ModelFile::Regcal(f) => Body::Regcal(f.into()),
        ModelFile::Pareto(f) => Body::Pareto(f.into()),
    };
    let envelope = Envelope {
        format_version: MODEL_FORMAT_VERSION.to_string(),
        body,
    };
    let text = serde_json::to_string_pretty(&envelope)?;
    fs::write(path, text + "\n").map_err(Error::Io)
}

pub fn read_model_json(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)?;
    // check the version before parsing the body, so a future format fails
    // with a version message instead of a shape mismatch
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .unwrap_or("missing")
        .to_string();
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(SUPPORTED_MODEL_MAJOR) {
        return Err(Error::ModelVersion {
            found,
            supported: SUPPORTED_MODEL_MAJOR,
        });
    }
    let envelope: Envelope = serde_json::from_value(value)?;
    Ok(match envelope.body {
        Body::Observation(j) => ModelFile::Observation(j.try_into()?),
        Body::Regcal(j) => ModelFile::Regcal(j.try_into()?),
        Body::Pareto(j) => ModelFile::Pareto(j.try_into()?),
    })
}

// ---------------------------------------------------------------------------
// run configuration

/// JSON run configuration; any field given here supersedes the matching
/// command-line flag. All fields optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: Option<String>,
    pub observations: Option<String>,
    pub model: Option<String>,
    pub grid: Option<String>,
    pub output: Option<String>,
    pub method: Option<Method>,
    pub family: Option<KernelFamily>,
    pub fit_nugget: Option<bool>,
    pub fixed_phi: Option<f64>,
    pub covariates: Option<Vec<String>>,
    /// Per-covariate interaction flags; defaults to all interacting.
    pub interacting: Option<Vec<bool>>,
    /// Half-open training window, as `{"t0": …, "t1": …}`.
    pub window: Option<Window>,
    pub mcmc: Option<McmcConfig>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        if let Some(w) = &cfg.window {
            Window::new(w.t0, w.t1)?;
        }
        if let (Some(names), Some(flags)) = (&cfg.covariates, &cfg.interacting) {
            if names.len() != flags.len() {
                return Err(Error::InvalidInput(
                    "covariates and interacting flags differ in length".to_string(),
                ));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{
        fit_pareto_records, fit_records_inverse, fit_regcal_records, TrainingRecord,
    };
    use crate::geo::Window;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn toy_layout() -> NetworkLayout {
        NetworkLayout::new(vec![
            Site {
                id: "ref".into(),
                loc: Location::new(0.25, 0.5),
                role: SiteRole::Collocated,
            },
            Site {
                id: "s-1".into(),
                loc: Location::new(0.7, 0.3),
                role: SiteRole::LowCostOnly,
            },
            Site {
                id: "cmon".into(),
                loc: Location::new(0.1, 0.9),
                role: SiteRole::ReferenceOnly,
            },
            Site {
                id: "g0".into(),
                loc: Location::new(0.5, 0.5),
                role: SiteRole::GridOnly,
            },
        ])
        .unwrap()
    }

    #[test]
    fn network_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.csv");
        let layout = toy_layout();
        write_network_csv(&path, &layout).unwrap();
        let back = read_network_csv(&path).unwrap();
        assert_eq!(back.sites(), layout.sites());
    }

    #[test]
    fn network_reader_rejects_bad_input_with_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.csv");

        std::fs::write(&path, "site_id,x,y,role\n").unwrap();
        let err = read_network_csv(&path).unwrap_err().to_string();
        assert!(err.contains("no sites"), "{err}");

        std::fs::write(&path, "site_id,x,y,role\na,0,0,A\na,1,1,B\n").unwrap();
        let err = read_network_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("duplicate site_id"), "{err}");

        std::fs::write(&path, "site_id,x,y,role\na,0,0,Q\n").unwrap();
        let err = read_network_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("unknown role"), "{err}");

        std::fs::write(&path, "site_id,x,y,role\na,zero,0,A\n").unwrap();
        let err = read_network_csv(&path).unwrap_err().to_string();
        assert!(err.contains("non-numeric"), "{err}");

        std::fs::write(&path, "id,x,y,role\na,0,0,A\n").unwrap();
        let err = read_network_csv(&path).unwrap_err().to_string();
        assert!(err.contains("bad header"), "{err}");
    }

    #[test]
    fn observations_csv_round_trips_with_absent_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let panel = PanelDataset::new(
            vec!["rh".into(), "temp".into()],
            vec![
                PanelRecord {
                    site_id: "ref".into(),
                    t: 0,
                    y: Some(14.25),
                    x_ref: Some(6.5),
                    covariates: vec![50.0, 21.5],
                },
                PanelRecord {
                    site_id: "cmon".into(),
                    t: 0,
                    y: None,
                    x_ref: Some(5.75),
                    covariates: vec![50.0, 21.5],
                },
                PanelRecord {
                    site_id: "s-1".into(),
                    t: 1,
                    y: Some(16.125),
                    x_ref: None,
                    covariates: vec![48.0, 22.0],
                },
            ],
        )
        .unwrap();
        write_observations_csv(&path, &panel).unwrap();
        let back = read_observations_csv(&path, None).unwrap();
        assert_eq!(back.covariate_names(), panel.covariate_names());
        assert_eq!(back.records(), panel.records());

        // absent y is kept (reference-only rows stay usable)
        assert_eq!(back.records()[1].y, None);

        let schema =
            CovariateSchema::all_interacting(vec!["rh".into(), "temp".into()]).unwrap();
        assert!(read_observations_csv(&path, Some(&schema)).is_ok());
        let wrong = CovariateSchema::all_interacting(vec!["rh".into()]).unwrap();
        let err = read_observations_csv(&path, Some(&wrong))
            .unwrap_err()
            .to_string();
        assert!(err.contains("do not match the expected schema"), "{err}");
    }

    #[test]
    fn observations_reader_rejects_bad_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("obs.csv");

        std::fs::write(&path, "site_id,t,y,x_ref,rh\na,first,1.0,2.0,50\n").unwrap();
        let err = read_observations_csv(&path, None).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("non-integer t"), "{err}");

        std::fs::write(&path, "site_id,t,y,x_ref,rh\na,0,1.0,2.0,\n").unwrap();
        let err = read_observations_csv(&path, None).unwrap_err().to_string();
        assert!(err.contains("empty covariate cell"), "{err}");

        // CRLF line endings parse identically
        std::fs::write(
            &path,
            "site_id,t,y,x_ref,rh\r\na,0,1.0,2.0,50\r\nb,0,,3.5,50\r\n",
        )
        .unwrap();
        let panel = read_observations_csv(&path, None).unwrap();
        assert_eq!(panel.records().len(), 2);
        assert_eq!(panel.records()[1].y, None);
        assert_eq!(panel.records()[1].x_ref, Some(3.5));
    }

    #[test]
    fn calibration_csv_round_trips_and_checks_flags() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        let rows = vec![
            CalibrationRow {
                site_id: "s-1".into(),
                t: 3,
                xhat: 7.25,
                sd: Some(0.5),
                lower: Some(6.27),
                upper: Some(8.23),
                stable: true,
            },
            CalibrationRow {
                site_id: "s-2".into(),
                t: 3,
                xhat: -812.0,
                sd: None,
                lower: None,
                upper: None,
                stable: false,
            },
        ];
        write_calibration_csv(&path, &rows).unwrap();
        assert_eq!(read_calibration_csv(&path).unwrap(), rows);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("unstable"));

        std::fs::write(
            &path,
            "site_id,t,xhat,sd,lower,upper,flag\na,0,1.0,,,,maybe\n",
        )
        .unwrap();
        let err = read_calibration_csv(&path).unwrap_err().to_string();
        assert!(err.contains("unknown flag"), "{err}");
    }

    #[test]
    fn grid_and_variogram_csvs_round_trip() {
        let dir = tempdir().unwrap();

        let grid_path = dir.path().join("grid.csv");
        let rows = vec![GridRow {
            x: 0.125,
            y: 0.875,
            t: 12,
            mean: 7.0625,
            sd: 0.25,
            lower: 6.5725,
            upper: 7.5525,
        }];
        write_grid_csv(&grid_path, &rows).unwrap();
        assert_eq!(read_grid_csv(&grid_path).unwrap(), rows);

        let vario_path = dir.path().join("vario.csv");
        let bins = vec![
            VariogramBin {
                distance: 0.1,
                semivariance: Some(2.5),
                pairs: 14,
            },
            VariogramBin {
                distance: 0.3,
                semivariance: None,
                pairs: 0,
            },
        ];
        write_variogram_csv(&vario_path, &bins).unwrap();
        assert_eq!(read_variogram_csv(&vario_path).unwrap(), bins);

        let pts_path = dir.path().join("pts.csv");
        std::fs::write(&pts_path, "x,y\n0.5,0.25\n").unwrap();
        let pts = read_grid_points(&pts_path).unwrap();
        assert_eq!(pts, vec![Location::new(0.5, 0.25)]);
    }

    #[test]
    fn float_cells_survive_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<GridRow> = (0..50)
            .map(|i| {
                let mut v = || -> f64 { rng.gen::<f64>() * 10f64.powi(rng.gen_range(-12..12)) };
                GridRow {
                    x: v(),
                    y: v(),
                    t: i,
                    mean: -v(),
                    sd: v(),
                    lower: v(),
                    upper: v(),
                }
            })
            .collect();
        write_grid_csv(&path, &rows).unwrap();
        let back = read_grid_csv(&path).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.sd.to_bits(), b.sd.to_bits());
        }

        // identical inputs produce byte-identical files
        let path2 = dir.path().join("grid2.csv");
        write_grid_csv(&path2, &rows).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    fn training_records(n: usize, seed: u64) -> Vec<TrainingRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = 7.0 + 4.0 * rng.gen::<f64>();
                let z = vec![rng.gen_range(30.0..70.0)];
                let y = 2.0 + 2.0 * x + 0.01 * z[0] + 0.002 * z[0] * x
                    + 0.3 * rng.gen::<f64>();
                TrainingRecord { y, x, z }
            })
            .collect()
    }

    #[test]
    fn regression_models_round_trip_through_json() {
        let dir = tempdir().unwrap();
        let schema = CovariateSchema::all_interacting(vec!["rh".into()]).unwrap();
        let window = Window::new(0, 200).unwrap();
        let records = training_records(200, 4);

        let obs = fit_records_inverse(&records, &schema, window).unwrap();
        let path = dir.path().join("obs.json");
        write_model_json(&path, &ModelFile::Observation(obs.clone())).unwrap();
        let back = match read_model_json(&path).unwrap() {
            ModelFile::Observation(f) => f,
            other => panic!("wrong model type {:?}", other.kind()),
        };
        assert_eq!(back.beta0.to_bits(), obs.beta0.to_bits());
        assert_eq!(back.beta3[0].to_bits(), obs.beta3[0].to_bits());
        assert_eq!(back.coef_cov, obs.coef_cov);
        assert_eq!(back.window, obs.window);

        let regcal = fit_regcal_records(&records, &schema, window).unwrap();
        let path = dir.path().join("regcal.json");
        write_model_json(&path, &ModelFile::Regcal(regcal.clone())).unwrap();
        match read_model_json(&path).unwrap() {
            ModelFile::Regcal(f) => assert_eq!(f.beta1.to_bits(), regcal.beta1.to_bits()),
            other => panic!("wrong model type {:?}", other.kind()),
        }
    }

    #[test]
    fn pareto_model_round_trips_through_json() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<TrainingRecord> = (0..400)
            .map(|_| {
                let y: f64 = rng.gen_range(10.0..40.0);
                let x = 12.0 + rng.gen::<f64>() * (y - 8.0).max(0.1);
                TrainingRecord { y, x, z: vec![] }
            })
            .collect();
        let fit = fit_pareto_records(&records, &CovariateSchema::empty(), 12.0, 5).unwrap();
        let path = dir.path().join("pareto.json");
        write_model_json(&path, &ModelFile::Pareto(fit.clone())).unwrap();
        match read_model_json(&path).unwrap() {
            ModelFile::Pareto(f) => {
                assert_eq!(f.gamma, fit.gamma);
                assert_eq!(f.xi.to_bits(), fit.xi.to_bits());
                assert_eq!(f.n_exceedances, fit.n_exceedances);
            }
            other => panic!("wrong model type {:?}", other.kind()),
        }
    }

    #[test]
    fn model_reader_rejects_unknown_majors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(
            &path,
            r#"{"format_version":"2.0","model_type":"observation","model":{}}"#,
        )
        .unwrap();
        match read_model_json(&path).unwrap_err() {
            Error::ModelVersion { found, supported } => {
                assert_eq!(found, "2.0");
                assert_eq!(supported, 1);
            }
            other => panic!("expected a version error, got {other}"),
        }

        std::fs::write(&path, r#"{"model_type":"observation","model":{}}"#).unwrap();
        assert!(matches!(
            read_model_json(&path).unwrap_err(),
            Error::ModelVersion { .. }
        ));
    }

    #[test]
    fn metrics_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let bins: Vec<DistanceBin> = BIN_EDGES
            .windows(2)
            .enumerate()
            .map(|(k, w)| DistanceBin {
                lo: w[0],
                hi: w[1],
                rmse: (k != 4).then(|| 0.5 + 0.1 * k as f64),
                n: if k == 4 { 0 } else { 10 * (k + 1) },
            })
            .collect();
        let rows = vec![MetricsRow {
            method: "gpfilter-freq".into(),
            report: MetricsReport {
                rmse_overall: 0.625,
                rmse_moderate: Some(0.75),
                fnr: Some(0.125),
                coverage95: Some(0.9375),
                ci_width_mean: None,
                residual_truth_correlation: Some(-0.03125),
                rmse_by_distance: bins,
                runtime_seconds: 1.5,
                n_points: 600,
            },
            base_rmse_overall: Some(0.6875),
            rmse_change_pct: Some(-9.090909090909),
            fnr_change_pct: None,
        }];
        write_metrics_csv(&path, &rows).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn run_config_parses_partial_json_and_rejects_unknown_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{
                "observations": "obs.csv",
                "method": "gpfilter-bayes",
                "family": "matern32",
                "window": {"t0": 0, "t1": 96},
                "covariates": ["rh", "temp"],
                "threshold": 10.5,
                "seed": 7
            }"#,
        )
        .unwrap();
        let cfg = RunConfig::from_json_file(&path).unwrap();
        assert_eq!(cfg.method, Some(Method::GpFilterBayes));
        assert_eq!(cfg.family, Some(KernelFamily::Matern32));
        assert_eq!(cfg.window, Some(Window { t0: 0, t1: 96 }));
        assert_eq!(cfg.threshold, Some(10.5));
        assert_eq!(cfg.network, None);

        std::fs::write(&path, r#"{"methods": ["regcal"]}"#).unwrap();
        assert!(RunConfig::from_json_file(&path).is_err());

        std::fs::write(&path, r#"{"window": {"t0": 5, "t1": 5}}"#).unwrap();
        assert!(RunConfig::from_json_file(&path).is_err());
    }
}
