//! Registration accuracy metrics: landmark error, label overlap, surface
//! distance, field plausibility and their per-case aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{self, DisplacementField};
use crate::volume::{LabelMask, LandmarkSet, TrunkMask};

/// Version tag written into every serialized metric table.
pub const METRIC_SCHEMA_VERSION: u32 = 1;

/// Labels of the large organs in the phantom (lungs and heart).
pub const LARGE_ORGAN_LABELS: [u16; 3] = [1, 2, 3];

/// Whether smaller or larger values of a metric are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Per-case scalar metrics that can be tabulated and ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "TRE")]
    Tre,
    #[serde(rename = "TRE30")]
    Tre30,
    #[serde(rename = "DSC")]
    Dsc,
    #[serde(rename = "DSC30")]
    Dsc30,
    #[serde(rename = "HD95")]
    Hd95,
    #[serde(rename = "SDLogJ")]
    SdLogJ,
    #[serde(rename = "RT")]
    Runtime,
}

impl Metric {
    pub fn direction(self) -> Direction {
        match self {
            Metric::Dsc | Metric::Dsc30 => Direction::HigherIsBetter,
            _ => Direction::LowerIsBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tre => "TRE",
            Metric::Tre30 => "TRE30",
            Metric::Dsc => "DSC",
            Metric::Dsc30 => "DSC30",
            Metric::Hd95 => "HD95",
            Metric::SdLogJ => "SDLogJ",
            Metric::Runtime => "RT",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-landmark error in mm: `|(p_fixed + u(p_fixed)) - p_moving|` with `u`
/// sampled trilinearly and each axis scaled by `spacing`.
pub fn tre(lms: &LandmarkSet, field: &DisplacementField, spacing: [f64; 3]) -> Result<Vec<f64>> {
    if lms.is_empty() {
        return invalid("landmark set is empty");
    }
    let grid = field.grid();
    lms.pairs
        .iter()
        .enumerate()
        .map(|(index, pair)| {
            let p = pair.fixed;
            if !grid.contains(p) {
                return Err(Error::LandmarkOutOfBounds {
                    index,
                    point: p,
                    dims: grid.dims,
                });
            }
            let u = field.sample(p);
            let d2: f64 = (0..3)
                .map(|a| ((p[a] + u[a] - pair.moving[a]) * spacing[a]).powi(2))
                .sum();
            Ok(d2.sqrt())
        })
        .collect()
}

/// Linear-interpolation percentile on values sorted worst-first, so `p = 30`
/// reads the boundary of the worst 30%.
pub fn robustness_percentile(values: &[f64], p: f64, direction: Direction) -> Result<f64> {
    if values.is_empty() {
        return invalid("percentile of an empty list");
    }
    if !(0.0..=100.0).contains(&p) {
        return invalid(format!("percentile {p} outside [0, 100]"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("percentile input contains non-finite values");
    }
    let mut s = values.to_vec();
    match direction {
        Direction::LowerIsBetter => s.sort_by(|a, b| b.total_cmp(a)),
        Direction::HigherIsBetter => s.sort_by(|a, b| a.total_cmp(b)),
    }
    Ok(interpolate_sorted(&s, p))
}

fn interpolate_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * (p / 100.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn check_dims(a: &LabelMask, b: &LabelMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// Dice per label over the union of labels; a label present in only one
/// mask scores 0.
pub fn dice(fixed: &LabelMask, warped: &LabelMask) -> Result<BTreeMap<u16, f64>> {
    check_dims(fixed, warped)?;
    let labels: BTreeSet<u16> = fixed.label_ids().union(warped.label_ids()).copied().collect();
    let mut inter: BTreeMap<u16, usize> = BTreeMap::new();
    for (&a, &b) in fixed.labels().iter().zip(warped.labels()) {
        if a != 0 && a == b {
            *inter.entry(a).or_default() += 1;
        }
    }
    Ok(labels
        .into_iter()
        .map(|l| {
            let n = fixed.count(l) + warped.count(l);
            let i = inter.get(&l).copied().unwrap_or(0);
            (l, 2.0 * i as f64 / n as f64)
        })
        .collect())
}

/// Voxels of `label` with at least one 6-neighbour outside the label; the
/// grid exterior counts as background.
pub fn boundary(mask: &LabelMask, label: u16) -> Vec<bool> {
    let dims = mask.dims();
    let l = mask.labels();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let grid = *mask.grid();
    (0..l.len())
        .map(|i| {
            if l[i] != label {
                return false;
            }
            let c = grid.coords(i);
            (0..3).any(|a| {
                c[a] == 0 || c[a] + 1 == dims[a] || l[i - strides[a]] != label || l[i + strides[a]] != label
            })
        })
        .collect()
}

/// Exact squared Euclidean distance (mm²) from every voxel to the nearest
/// `true` voxel; infinite when there is none.
pub fn squared_edt(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut d: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        for s in crate::filter::line_starts(dims, axis) {
            line.clear();
            line.extend((0..n).map(|i| d[s + i * strides[axis]]));
            edt_1d(&line, spacing[axis], &mut out);
            for (i, v) in out.iter().enumerate() {
                d[s + i * strides[axis]] = *v;
            }
        }
    }
    d
}

/// Lower envelope of parabolas `f[q] + ((x - q) * h)^2` evaluated at every
/// sample (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], h: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |q: usize| q as f64 * h;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        // near-ties at breakpoints resolve to the floating-point minimum
        let eval = |j: usize| {
            let dx = (q as f64 - v[j] as f64) * h;
            f[v[j]] + dx * dx
        };
        *o = (k.saturating_sub(1)..(k + 2).min(v.len())).map(eval).fold(f64::INFINITY, f64::min);
    }
}

/// Pooled symmetric surface distances (mm) between the `label` boundaries.
pub fn surface_distances(a: &LabelMask, b: &LabelMask, label: u16, spacing: [f64; 3]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    if !a.label_ids().contains(&label) || !b.label_ids().contains(&label) {
        return Err(Error::MissingLabel(label));
    }
    let dims = a.dims();
    let ba = boundary(a, label);
    let bb = boundary(b, label);
    let da = squared_edt(&ba, dims, spacing);
    let db = squared_edt(&bb, dims, spacing);
    let mut out: Vec<f64> = (0..ba.len()).filter(|&i| ba[i]).map(|i| db[i].sqrt()).collect();
    out.extend((0..bb.len()).filter(|&i| bb[i]).map(|i| da[i].sqrt()));
    Ok(out)
}

/// 95th percentile (linear interpolation) of the pooled symmetric surface
/// distances, in mm.
pub fn hd95(fixed: &LabelMask, warped: &LabelMask, label: u16, spacing: [f64; 3]) -> Result<f64> {
    let mut d = surface_distances(fixed, warped, label, spacing)?;
    d.sort_by(|a, b| a.total_cmp(b));
    Ok(interpolate_sorted(&d, 95.0))
}

/// Metrics of one method on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub method_id: String,
    pub tre_mm: Vec<f64>,
    pub dsc: BTreeMap<u16, f64>,
    pub hd95_mm: BTreeMap<u16, f64>,
    /// Labels present in only one of the two masks; scored 0 in `dsc` but left
    /// out of the aggregates.
    pub missing_labels: Vec<u16>,
    pub sdlogj: f64,
    pub runtime_s: Option<f64>,
}

impl CaseMetrics {
    pub fn mean_tre(&self) -> f64 {
        mean(&self.tre_mm)
    }

    /// Worst-30% boundary over this case's landmark errors.
    pub fn tre30(&self) -> f64 {
        robustness_percentile(&self.tre_mm, 30.0, Direction::LowerIsBetter).unwrap_or(f64::NAN)
    }

    /// Mean Dice over labels present in both masks, optionally restricted to
    /// `labels`.
    pub fn mean_dsc(&self, labels: Option<&[u16]>) -> f64 {
        let vals: Vec<f64> = self
            .dsc
            .iter()
            .filter(|(l, _)| !self.missing_labels.contains(l) && labels.is_none_or(|s| s.contains(l)))
            .map(|(_, v)| *v)
            .collect();
        mean(&vals)
    }

    /// Worst-30% boundary over this case's per-label Dice values.
    pub fn dsc30(&self) -> f64 {
        let vals: Vec<f64> = self
            .dsc
            .iter()
            .filter(|(l, _)| !self.missing_labels.contains(l))
            .map(|(_, v)| *v)
            .collect();
        robustness_percentile(&vals, 30.0, Direction::HigherIsBetter).unwrap_or(f64::NAN)
    }

    pub fn mean_hd95(&self) -> f64 {
        mean(&self.hd95_mm.values().copied().collect::<Vec<_>>())
    }

    /// Per-case value of `metric`; `NaN` when undefined (e.g. no runtime).
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Tre => self.mean_tre(),
            Metric::Tre30 => self.tre30(),
            Metric::Dsc => self.mean_dsc(None),
            Metric::Dsc30 => self.dsc30(),
            Metric::Hd95 => self.mean_hd95(),
            Metric::SdLogJ => self.sdlogj,
            Metric::Runtime => self.runtime_s.unwrap_or(f64::NAN),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Everything needed to score one case apart from the field itself.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub fixed_labels: LabelMask,
    pub moving_labels: LabelMask,
    pub landmarks: LandmarkSet,
    pub trunk: TrunkMask,
}

/// Scores `field` on one case: TRE on landmarks, Dice and HD95 of the
/// nearest-neighbour-warped moving labels, SDlogJ inside the trunk.
pub fn evaluate_case(
    case_id: &str,
    method_id: &str,
    data: &CaseData,
    field: &DisplacementField,
    runtime_s: Option<f64>,
) -> Result<CaseMetrics> {
    let grid = *data.fixed_labels.grid();
    if field.dims() != grid.dims || data.trunk.dims() != grid.dims {
        return Err(Error::DimMismatch {
            left: grid.dims,
            right: if field.dims() != grid.dims { field.dims() } else { data.trunk.dims() },
        });
    }
    let tre_mm = tre(&data.landmarks, field, grid.spacing)?;
    let warped = field::warp_labels(&data.moving_labels, field)?;
    let dsc = dice(&data.fixed_labels, &warped)?;
    let mut hd = BTreeMap::new();
    let mut missing = Vec::new();
    for &l in dsc.keys() {
        match hd95(&data.fixed_labels, &warped, l, grid.spacing) {
            Ok(v) => {
                hd.insert(l, v);
            }
            Err(Error::MissingLabel(l)) => missing.push(l),
            Err(e) => return Err(e),
        }
    }
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        method_id: method_id.to_string(),
        tre_mm,
        dsc,
        hd95_mm: hd,
        missing_labels: missing,
        sdlogj: field::sdlogj(field, Some(&data.trunk))?,
        runtime_s,
    })
}

/// A (method, case) pair that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub method_id: String,
    pub case_id: String,
    pub reason: String,
}

/// Metrics of many methods over many cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub schema_version: u32,
    pub rows: Vec<CaseMetrics>,
    #[serde(default)]
    pub failures: Vec<FailureRow>,
}

impl Default for MetricTable {
    fn default() -> Self {
        MetricTable {
            schema_version: METRIC_SCHEMA_VERSION,
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }
}

impl MetricTable {
    pub fn new(rows: Vec<CaseMetrics>) -> Result<Self> {
        let t = MetricTable {
            rows,
            ..Default::default()
        };
        t.validate()?;
        Ok(t)
    }

    /// Every (method, case) pair appears at most once.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != METRIC_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "metric table schema_version {} is not supported (expected {METRIC_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert((r.method_id.as_str(), r.case_id.as_str())) {
                return invalid(format!("duplicate row for method {} case {}", r.method_id, r.case_id));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, row: CaseMetrics) -> Result<()> {
        if self.rows.iter().any(|r| r.method_id == row.method_id && r.case_id == row.case_id) {
            return invalid(format!("duplicate row for method {} case {}", row.method_id, row.case_id));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Method ids in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method_id) {
                out.push(r.method_id.clone());
            }
        }
        out
    }

    pub fn cases(&self, method: &str) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter(|r| r.method_id == method)
            .map(|r| r.case_id.clone())
            .collect()
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a CaseMetrics> + 'a {
        self.rows.iter().filter(move |r| r.method_id == method)
    }

    /// Per-case values keyed by case id.
    pub fn values(&self, method: &str, metric: Metric) -> BTreeMap<String, f64> {
        self.rows_for(method)
            .map(|r| (r.case_id.clone(), r.value(metric)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: MetricTable = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("metric table: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json()?)
    }

    /// One line per (method, case, label): `method,case,label,dsc,hd95_mm`.
    /// HD95 is empty for labels missing from one mask.
    pub fn detail_csv(&self) -> String {
        let mut out = String::from("method,case,label,dsc,hd95_mm\n");
        for r in &self.rows {
            for (l, d) in &r.dsc {
                let hd = r.hd95_mm.get(l).map(|v| format!("{v:.6}")).unwrap_or_default();
                out.push_str(&format!("{},{},{l},{d:.6},{hd}\n", r.method_id, r.case_id));
            }
        }
        out
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
