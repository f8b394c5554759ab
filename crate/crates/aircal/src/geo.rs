//! Network geometry, observation panels, and time indexing.
//!
//! These are the domain types every other module works with. Coordinates are
//! planar (pre-projected); time is an opaque integer index, so hourly vs.
//! daily resolution is the caller's choice.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A planar location. Distances are Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Which kind of measurements a site carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SiteRole {
    /// A: reference monitor with a collocated low-cost sensor.
    Collocated,
    /// B: low-cost sensor only.
    LowCostOnly,
    /// C: reference monitor only.
    ReferenceOnly,
    /// D: no instruments; a prediction-grid point.
    GridOnly,
}

impl SiteRole {
    pub fn letter(&self) -> char {
        match self {
            SiteRole::Collocated => 'A',
            SiteRole::LowCostOnly => 'B',
            SiteRole::ReferenceOnly => 'C',
            SiteRole::GridOnly => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<SiteRole> {
        match c {
            'A' => Some(SiteRole::Collocated),
            'B' => Some(SiteRole::LowCostOnly),
            'C' => Some(SiteRole::ReferenceOnly),
            'D' => Some(SiteRole::GridOnly),
            _ => None,
        }
    }

    /// Sites whose reference instrument pins the true concentration (A ∪ C).
    pub fn has_reference(&self) -> bool {
        matches!(self, SiteRole::Collocated | SiteRole::ReferenceOnly)
    }

    /// Sites carrying a low-cost sensor (A ∪ B).
    pub fn has_lowcost(&self) -> bool {
        matches!(self, SiteRole::Collocated | SiteRole::LowCostOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub loc: Location,
    pub role: SiteRole,
}

/// The sensor network: sites with coordinates and roles.
///
/// Invariants enforced at construction: unique ids, finite coordinates, at
/// least one reference-carrying site (A ∪ C), and pairwise-distinct locations
/// within A ∪ B ∪ C. A truly collocated low-cost/reference pair must be
/// modeled as a single site with role A; grid points (D) may coincide with
/// anything.
#[derive(Debug, Clone)]
pub struct NetworkLayout {
    sites: Vec<Site>,
    by_id: HashMap<String, usize>,
}

impl NetworkLayout {
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if !s.loc.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "site {:?} has non-finite coordinates",
                    s.id
                )));
            }
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate site_id {:?}", s.id)));
            }
        }
        if !sites.iter().any(|s| s.role.has_reference()) {
            return Err(Error::NoReferenceData(
                ": layout has no A or C site".to_string(),
            ));
        }
        let measured: Vec<&Site> = sites
            .iter()
            .filter(|s| s.role != SiteRole::GridOnly)
            .collect();
        for i in 0..measured.len() {
            for j in (i + 1)..measured.len() {
                if measured[i].loc == measured[j].loc {
                    return Err(Error::InvalidInput(format!(
                        "sites {:?} and {:?} share a location; model a collocated pair as one role-A site",
                        measured[i].id, measured[j].id
                    )));
                }
            }
        }
        Ok(NetworkLayout { sites, by_id })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn get(&self, id: &str) -> Option<&Site> {
        self.by_id.get(id).map(|&i| &self.sites[i])
    }

    pub fn sites_with_role(&self, role: SiteRole) -> impl Iterator<Item = &Site> {
        self.sites.iter().filter(move |s| s.role == role)
    }

    /// Sites in A ∪ C, in layout order.
    pub fn reference_sites(&self) -> Vec<&Site> {
        self.sites.iter().filter(|s| s.role.has_reference()).collect()
    }

    /// Grid (role D) locations, in layout order.
    pub fn grid_locations(&self) -> Vec<Location> {
        self.sites_with_role(SiteRole::GridOnly).map(|s| s.loc).collect()
    }
}

/// Covariate values for one record, ordered per the panel's covariate names.
pub type CovariateVector = Vec<f64>;

/// One (site, time) row of the observation panel. `y` is the low-cost
/// reading, `x_ref` the reference reading; either may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub site_id: String,
    pub t: i64,
    pub y: Option<f64>,
    pub x_ref: Option<f64>,
    pub covariates: CovariateVector,
}

/// Per-(site, time) observations plus named covariates.
///
/// Records always carry a full covariate vector; rows with missing covariates
/// are dropped (with a warning) at parse time, never stored.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    covariate_names: Vec<String>,
    records: Vec<PanelRecord>,
    /// record indices grouped by t, in insertion order within each t
    time_index: std::collections::BTreeMap<i64, Vec<usize>>,
}

impl PanelDataset {
    pub fn new(covariate_names: Vec<String>, records: Vec<PanelRecord>) -> Result<Self> {
        {
            let mut names = covariate_names.clone();
            names.sort();
            names.dedup();
            if names.len() != covariate_names.len() {
                return Err(Error::InvalidInput("duplicate covariate name".to_string()));
            }
        }
        let mut seen = HashMap::with_capacity(records.len());
        let mut time_index = std::collections::BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::InvalidInput(format!(
                    "record ({:?}, {}) has {} covariates, expected {}",
                    r.site_id,
                    r.t,
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            if let Some(v) = r.y {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite y at ({:?}, {})",
                        r.site_id, r.t
                    )));
                }
            }
            if let Some(v) = r.x_ref {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite x_ref at ({:?}, {})",
                        r.site_id, r.t
                    )));
                }
            }
            if seen.insert((r.site_id.clone(), r.t), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate record for ({:?}, {})",
                    r.site_id, r.t
                )));
            }
            time_index.entry(r.t).or_insert_with(Vec::new).push(i);
        }
        Ok(PanelDataset {
            covariate_names,
            records,
            time_index,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        self.time_index.keys().copied()
    }

    pub fn records_at(&self, t: i64) -> impl Iterator<Item = &PanelRecord> {
        self.time_index
            .get(&t)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// Enforce the role rules against a layout: B rows never carry `x_ref`,
    /// C rows never carry `y`, and every site is known to the layout.
    pub fn validate_roles(&self, layout: &NetworkLayout) -> Result<()> {
        for r in &self.records {
            let site = layout.get(&r.site_id).ok_or_else(|| {
                Error::InvalidInput(format!("record references unknown site {:?}", r.site_id))
            })?;
            match site.role {
                SiteRole::LowCostOnly if r.x_ref.is_some() => {
                    return Err(Error::InvalidInput(format!(
                        "B-site {:?} carries x_ref at t={}",
                        r.site_id, r.t
                    )));
                }
                SiteRole::ReferenceOnly if r.y.is_some() => {
                    return Err(Error::InvalidInput(format!(
                        "C-site {:?} carries y at t={}",
                        r.site_id, r.t
                    )));
                }
                SiteRole::GridOnly => {
                    return Err(Error::InvalidInput(format!(
                        "grid-only site {:?} carries observations",
                        r.site_id
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Half-open training/test window [t0, t1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub t0: i64,
    pub t1: i64,
}

impl Window {
    pub fn new(t0: i64, t1: i64) -> Result<Self> {
        if t0 >= t1 {
            return Err(Error::InvalidInput(format!(
                "empty window [{t0}, {t1})"
            )));
        }
        Ok(Window { t0, t1 })
    }

    pub fn contains(&self, t: i64) -> bool {
        self.t0 <= t && t < self.t1
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.t0..self.t1
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.t0, self.t1)
    }
}

/// The time-t cross-section the filter consumes: reference values at A ∪ C
/// and low-cost readings (with covariates) at B.
///
/// Normally built with [`build_time_slice`]; the fields are public so tests
/// and custom drivers can assemble slices directly.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: i64,
    /// Sites in A ∪ C with an observed reference value at t.
    pub ref_ids: Vec<String>,
    pub ref_locs: Vec<Location>,
    pub x_ref: DVector<f64>,
    /// Sites in B with an observed low-cost value at t.
    pub b_ids: Vec<String>,
    pub b_locs: Vec<Location>,
    pub y_b: DVector<f64>,
    /// Covariates at the B sites, one row per site (n_b × q).
    pub z_b: DMatrix<f64>,
}

impl TimeSlice {
    /// Validates dimension consistency and the non-empty-reference rule.
    pub fn new(
        t: i64,
        ref_ids: Vec<String>,
        ref_locs: Vec<Location>,
        x_ref: DVector<f64>,
        b_ids: Vec<String>,
        b_locs: Vec<Location>,
        y_b: DVector<f64>,
        z_b: DMatrix<f64>,
    ) -> Result<Self> {
        if ref_ids.is_empty() {
            return Err(Error::NoReferenceData(format!(" at t={t}")));
        }
        if ref_ids.len() != ref_locs.len() || ref_ids.len() != x_ref.len() {
            return Err(Error::InvalidInput(
                "reference ids/locations/values length mismatch".to_string(),
            ));
        }
        if b_ids.len() != b_locs.len() || b_ids.len() != y_b.len() || b_ids.len() != z_b.nrows() {
            return Err(Error::InvalidInput(
                "B-site ids/locations/values/covariate-rows length mismatch".to_string(),
            ));
        }
        Ok(TimeSlice {
            t,
            ref_ids,
            ref_locs,
            x_ref,
            b_ids,
            b_locs,
            y_b,
            z_b,
        })
    }

    pub fn n_ref(&self) -> usize {
        self.ref_ids.len()
    }

    pub fn n_b(&self) -> usize {
        self.b_ids.len()
    }
}

/// Extract the time-t cross-section of a panel.
///
/// Sites appear in layout order. A- and C-sites with an observed `x_ref` at t
/// enter the reference block; B-sites with an observed `y` enter the low-cost
/// block; everything else is dropped for this slice. Errors with
/// `NoReferenceData` when no reference value is observed at t.
pub fn build_time_slice(
    panel: &PanelDataset,
    layout: &NetworkLayout,
    t: i64,
) -> Result<TimeSlice> {
    let mut at_t: HashMap<&str, &PanelRecord> = HashMap::new();
    for r in panel.records_at(t) {
        at_t.insert(r.site_id.as_str(), r);
    }

    let q = panel.covariate_names().len();
    let mut ref_ids = Vec::new();
    let mut ref_locs = Vec::new();
    let mut x_ref = Vec::new();
    let mut b_ids = Vec::new();
    let mut b_locs = Vec::new();
    let mut y_b = Vec::new();
    let mut z_rows: Vec<f64> = Vec::new();

    for site in layout.sites() {
        let Some(rec) = at_t.get(site.id.as_str()) else {
            continue;
        };
        match site.role {
            SiteRole::Collocated | SiteRole::ReferenceOnly => {
                if let Some(x) = rec.x_ref {
                    ref_ids.push(site.id.clone());
                    ref_locs.push(site.loc);
                    x_ref.push(x);
                }
            }
            SiteRole::LowCostOnly => {
                if let Some(y) = rec.y {
                    b_ids.push(site.id.clone());
                    b_locs.push(site.loc);
                    y_b.push(y);
                    z_rows.extend_from_slice(&rec.covariates);
                }
            }
            SiteRole::GridOnly => {}
        }
    }

    let n_b = b_ids.len();
    TimeSlice::new(
        t,
        ref_ids,
        ref_locs,
        DVector::from_vec(x_ref),
        b_ids,
        b_locs,
        DVector::from_vec(y_b),
        DMatrix::from_row_slice(n_b, q, &z_rows),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(id: &str, x: f64, y: f64, role: SiteRole) -> Site {
        Site {
            id: id.to_string(),
            loc: Location::new(x, y),
            role,
        }
    }

    fn record(site_id: &str, t: i64, y: Option<f64>, x_ref: Option<f64>, z: &[f64]) -> PanelRecord {
        PanelRecord {
            site_id: site_id.to_string(),
            t,
            y,
            x_ref,
            covariates: z.to_vec(),
        }
    }

    #[test]
    fn layout_rejects_duplicate_ids_and_shared_locations() {
        let err = NetworkLayout::new(vec![
            site("a", 0.0, 0.0, SiteRole::Collocated),
            site("a", 1.0, 0.0, SiteRole::LowCostOnly),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate site_id"));

        let err = NetworkLayout::new(vec![
            site("a", 0.0, 0.0, SiteRole::Collocated),
            site("b", 0.0, 0.0, SiteRole::LowCostOnly),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("share a location"));

        // grid points may coincide with measured sites
        NetworkLayout::new(vec![
            site("a", 0.0, 0.0, SiteRole::Collocated),
            site("g", 0.0, 0.0, SiteRole::GridOnly),
        ])
        .unwrap();
    }

    #[test]
    fn layout_requires_a_reference_site() {
        let err = NetworkLayout::new(vec![site("b1", 0.0, 0.0, SiteRole::LowCostOnly)]).unwrap_err();
        assert!(matches!(err, Error::NoReferenceData(_)));
    }

    #[test]
    fn slice_selects_observed_sites() {
        let layout = NetworkLayout::new(vec![
            site("a1", 0.0, 0.0, SiteRole::Collocated),
            site("b1", 0.5, 0.5, SiteRole::LowCostOnly),
            site("b2", 0.2, 0.8, SiteRole::LowCostOnly),
        ])
        .unwrap();
        let panel = PanelDataset::new(
            vec!["rh".to_string()],
            vec![
                record("a1", 0, Some(14.0), Some(7.0), &[50.0]),
                record("b1", 0, Some(15.0), None, &[51.0]),
                record("b2", 0, Some(16.0), None, &[52.0]),
            ],
        )
        .unwrap();
        let slice = build_time_slice(&panel, &layout, 0).unwrap();
        assert_eq!(slice.n_ref(), 1);
        assert_eq!(slice.n_b(), 2);
        assert_eq!(slice.x_ref[0], 7.0);
        assert_eq!(slice.y_b[1], 16.0);
        assert_eq!(slice.z_b[(1, 0)], 52.0);
    }

    #[test]
    fn slice_drops_missing_y_and_requires_reference() {
        let layout = NetworkLayout::new(vec![
            site("a1", 0.0, 0.0, SiteRole::Collocated),
            site("b1", 0.5, 0.5, SiteRole::LowCostOnly),
        ])
        .unwrap();
        let panel = PanelDataset::new(
            vec![],
            vec![
                record("a1", 0, Some(14.0), Some(7.0), &[]),
                record("b1", 0, None, None, &[]),
                record("a1", 1, Some(14.0), None, &[]),
                record("b1", 1, Some(12.0), None, &[]),
            ],
        )
        .unwrap();

        let slice = build_time_slice(&panel, &layout, 0).unwrap();
        assert_eq!(slice.n_b(), 0, "B-site without y is dropped");

        let err = build_time_slice(&panel, &layout, 1).unwrap_err();
        assert!(matches!(err, Error::NoReferenceData(_)));
    }

    #[test]
    fn panel_rejects_duplicates_and_role_violations() {
        let err = PanelDataset::new(
            vec![],
            vec![
                record("a1", 0, Some(1.0), None, &[]),
                record("a1", 0, Some(2.0), None, &[]),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate record"));

        let layout = NetworkLayout::new(vec![
            site("c1", 0.0, 0.0, SiteRole::ReferenceOnly),
            site("b1", 1.0, 0.0, SiteRole::LowCostOnly),
        ])
        .unwrap();
        let panel = PanelDataset::new(
            vec![],
            vec![record("b1", 0, Some(1.0), Some(2.0), &[])],
        )
        .unwrap();
        assert!(panel.validate_roles(&layout).is_err());
    }

    #[test]
    fn window_is_half_open() {
        let w = Window::new(3, 5).unwrap();
        assert!(w.contains(3));
        assert!(w.contains(4));
        assert!(!w.contains(5));
        assert!(Window::new(5, 5).is_err());
    }
}
