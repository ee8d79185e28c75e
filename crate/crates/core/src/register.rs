//! Keypoint-driven deformable registration.
//!
//! Pipeline: clamp, MIND descriptors, Förstner keypoints on the fixed image,
//! exhaustive discrete matching, smoothness-coupled selection, thin-plate
//! densification and gradient-based instance optimization, followed by
//! light smoothing. The discrete and continuous stages run on a working grid
//! that is either the input grid or its 2x mean-pooled version.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{
    foerstner_keypoints, mind_descriptor, DescriptorParams, DescriptorVolume, KeypointParams, KeypointSet,
    MIND_CHANNELS,
};
use crate::field::{self, DisplacementField, SparseDisplacements};
use crate::volume::{clamp_intensity, Grid, TrunkMask, Volume};

pub const REGISTRATION_SCHEMA_VERSION: u32 = 1;

/// Registration parameters. Distances are in working-grid voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub schema_version: u32,
    /// Intensity window applied before feature extraction.
    pub clamp: [f32; 2],
    pub keypoints: KeypointParams,
    pub descriptors: DescriptorParams,
    /// Run matching and instance optimization on the 2x pooled grid.
    pub half_resolution: bool,
    pub search_radius: usize,
    pub quantization: usize,
    /// Half width of the cube over which matching costs are averaged.
    pub match_patch_radius: usize,
    pub coupling_alpha: f64,
    pub coupling_iters: usize,
    pub coupling_neighbours: usize,
    pub tps_lambda: f64,
    pub instance_optimization: bool,
    pub io_lr: f64,
    pub io_iters: usize,
    pub io_reg_weight: f64,
    /// Reject Adam steps that increase the objective and retry with half the
    /// step.
    pub step_halving: bool,
    pub smooth_window: usize,
    pub smooth_repeats: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            schema_version: REGISTRATION_SCHEMA_VERSION,
            clamp: [-1024.0, 2048.0],
            keypoints: KeypointParams::default(),
            descriptors: DescriptorParams::default(),
            half_resolution: true,
            search_radius: 5,
            quantization: 1,
            match_patch_radius: 1,
            coupling_alpha: 0.01,
            coupling_iters: 4,
            coupling_neighbours: 10,
            tps_lambda: 0.1,
            instance_optimization: true,
            io_lr: 0.05,
            io_iters: 700,
            io_reg_weight: 1.0,
            step_halving: true,
            smooth_window: 3,
            smooth_repeats: 1,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != REGISTRATION_SCHEMA_VERSION {
            return bad(format!(
                "unsupported registration schema_version {} (expected {REGISTRATION_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.clamp[0] < self.clamp[1]) {
            return bad(format!("clamp range {:?} is empty", self.clamp));
        }
        if self.quantization == 0 || self.search_radius < self.quantization {
            return bad(format!(
                "need search_radius >= quantization >= 1, got {} and {}",
                self.search_radius, self.quantization
            ));
        }
        if self.search_radius % self.quantization != 0 {
            return bad("search_radius must be a multiple of quantization".into());
        }
        if !(self.coupling_alpha > 0.0 && self.coupling_alpha.is_finite()) {
            return bad(format!("coupling_alpha must be positive, got {}", self.coupling_alpha));
        }
        if self.coupling_iters == 0 || self.coupling_neighbours == 0 {
            return bad("coupling_iters and coupling_neighbours must be positive".into());
        }
        if !(self.tps_lambda >= 0.0 && self.tps_lambda.is_finite()) {
            return bad(format!("tps_lambda must be nonnegative, got {}", self.tps_lambda));
        }
        if !(self.io_lr > 0.0 && self.io_lr.is_finite()) {
            return bad(format!("io_lr must be positive, got {}", self.io_lr));
        }
        if !(self.io_reg_weight >= 0.0 && self.io_reg_weight.is_finite()) {
            return bad(format!("io_reg_weight must be nonnegative, got {}", self.io_reg_weight));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return bad(format!("smooth_window must be odd, got {}", self.smooth_window));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RegistrationConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Matching costs for every candidate displacement of every kept keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor {
    pub search_radius: usize,
    pub quantization: usize,
    pub points: Vec<[usize; 3]>,
    /// `points.len() * side^3` costs, candidate index x-fastest.
    pub costs: Vec<f32>,
    /// Keypoints dropped for lying closer than `search_radius` to the border.
    pub skipped: usize,
}

impl CostTensor {
    /// Candidates per axis: `2 R / q + 1`.
    pub fn side(&self) -> usize {
        2 * self.search_radius / self.quantization + 1
    }

    pub fn candidates(&self) -> usize {
        self.side().pow(3)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn costs_of(&self, k: usize) -> &[f32] {
        let n = self.candidates();
        &self.costs[k * n..(k + 1) * n]
    }

    /// Displacement of candidate `j` in voxels.
    pub fn displacement(&self, j: usize) -> [f64; 3] {
        let s = self.side();
        let h = (s / 2) as f64;
        let q = self.quantization as f64;
        [j % s, (j / s) % s, j / (s * s)].map(|c| (c as f64 - h) * q)
    }

    /// Lowest-cost candidate; ties go to the shortest displacement.
    pub fn argmin(&self, k: usize) -> usize {
        self.argmin_penalized(k, |_| 0.0)
    }

    fn argmin_penalized(&self, k: usize, penalty: impl Fn([f64; 3]) -> f64) -> usize {
        let mut best = (f64::INFINITY, f64::INFINITY, 0usize);
        for (j, &c) in self.costs_of(k).iter().enumerate() {
            let d = self.displacement(j);
            let total = c as f64 + penalty(d);
            let len = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if total < best.0 || (total == best.0 && len < best.1) {
                best = (total, len, j);
            }
        }
        best.2
    }
}

fn clamp_index(c: i64, n: usize) -> usize {
    c.clamp(0, n as i64 - 1) as usize
}

/// Exhaustive patch-averaged descriptor SSD over the quantized displacement
/// cube `[-R, R]^3`. Keypoints nearer than `R` to the border are skipped.
pub fn discrete_match(
    fixed: &DescriptorVolume,
    moving: &DescriptorVolume,
    kps: &KeypointSet,
    search_radius: usize,
    quantization: usize,
    patch_radius: usize,
) -> Result<CostTensor> {
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch {
            left: fixed.dims(),
            right: moving.dims(),
        });
    }
    if quantization == 0 || search_radius < quantization || search_radius % quantization != 0 {
        return invalid(format!(
            "search_radius {search_radius} must be a positive multiple of quantization {quantization}"
        ));
    }
    let dims = fixed.dims();
    let r = search_radius;
    let (points, outside): (Vec<[usize; 3]>, Vec<[usize; 3]>) = kps
        .points
        .iter()
        .partition(|p| (0..3).all(|a| p[a] >= r && p[a] + r < dims[a]));
    if !outside.is_empty() {
        log::warn!("{} keypoints closer than {r} voxels to the border were skipped", outside.len());
    }
    let mut tensor = CostTensor {
        search_radius,
        quantization,
        points,
        costs: Vec::new(),
        skipped: outside.len(),
    };
    let side = tensor.side() as i64;
    let half = side / 2;
    let q = quantization as i64;
    let pr = patch_radius as i64;
    let idx = |c: [i64; 3]| {
        let [x, y, z] = [0, 1, 2].map(|a| clamp_index(c[a], dims[a]));
        x + dims[0] * (y + dims[1] * z)
    };
    let per_point: Vec<Vec<f32>> = tensor
        .points
        .par_iter()
        .map(|p| {
            let p = p.map(|c| c as i64);
            let mut patch = Vec::new();
            for oz in -pr..=pr {
                for oy in -pr..=pr {
                    for ox in -pr..=pr {
                        patch.push([ox, oy, oz]);
                    }
                }
            }
            let norm = 1.0 / patch.len() as f64;
            let mut out = Vec::with_capacity((side * side * side) as usize);
            for cz in 0..side {
                for cy in 0..side {
                    for cx in 0..side {
                        let d = [(cx - half) * q, (cy - half) * q, (cz - half) * q];
                        let mut acc = 0.0f64;
                        for o in &patch {
                            let f = fixed.at(idx([p[0] + o[0], p[1] + o[1], p[2] + o[2]]));
                            let m = moving.at(idx([p[0] + o[0] + d[0], p[1] + o[1] + d[1], p[2] + o[2] + d[2]]));
                            for c in 0..MIND_CHANNELS {
                                let e = (f[c] - m[c]) as f64;
                                acc += e * e;
                            }
                        }
                        out.push((acc * norm) as f32);
                    }
                }
            }
            out
        })
        .collect();
    tensor.costs = per_point.concat();
    Ok(tensor)
}

/// Indices of the `k` nearest other points, brute force.
fn nearest_neighbours(points: &[[f64; 3]], k: usize) -> Vec<Vec<(usize, f64)>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (j, field::norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]])))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// Inverse-distance-weighted mean of the neighbours' displacements.
fn idw_mean(neigh: &[(usize, f64)], disp: &[[f64; 3]], fallback: [f64; 3]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for &(j, d) in neigh {
        let w = 1.0 / d.max(1e-6);
        for a in 0..3 {
            acc[a] += w * disp[j][a];
        }
        wsum += w;
    }
    if wsum == 0.0 {
        fallback
    } else {
        acc.map(|v| v / wsum)
    }
}

/// Alternates between smoothing the current displacements over the `k`
/// nearest keypoints and re-selecting each keypoint's candidate under the
/// penalty `alpha ||d - dbar||^2`; alpha doubles every iteration.
pub fn coupled_select(costs: &CostTensor, alpha: f64, iters: usize, k: usize) -> Result<SparseDisplacements> {
    if iters == 0 {
        return invalid("coupled_select needs at least one iteration");
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return invalid(format!("coupling alpha must be nonnegative, got {alpha}"));
    }
    let points: Vec<[f64; 3]> = costs.points.iter().map(|p| p.map(|c| c as f64)).collect();
    let neigh = nearest_neighbours(&points, k);
    let mut disp: Vec<[f64; 3]> = (0..costs.len()).map(|i| costs.displacement(costs.argmin(i))).collect();
    let mut a = alpha;
    for _ in 0..iters {
        let smooth: Vec<[f64; 3]> = (0..costs.len()).map(|i| idw_mean(&neigh[i], &disp, disp[i])).collect();
        disp = (0..costs.len())
            .into_par_iter()
            .map(|i| {
                let m = smooth[i];
                let j = costs.argmin_penalized(i, |d| {
                    a * ((d[0] - m[0]).powi(2) + (d[1] - m[1]).powi(2) + (d[2] - m[2]).powi(2))
                });
                costs.displacement(j)
            })
            .collect();
        a *= 2.0;
    }
    SparseDisplacements::new(points, disp)
}

/// Axis stencil for value-and-derivative sampling: lower index, upper
/// index, weight of the upper sample, and whether the coordinate lies in the
/// domain (outside it the edge-replicated sample is constant).
#[inline]
fn axis(n: usize, x: f64) -> (usize, usize, f64, f64) {
    if n == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let max = (n - 1) as f64;
    let inside = if (0.0..=max).contains(&x) { 1.0 } else { 0.0 };
    let xc = if x.is_nan() { 0.0 } else { x.clamp(0.0, max) };
    let lo = (xc.floor() as usize).min(n - 2);
    (lo, lo + 1, xc - lo as f64, inside)
}

/// Trilinear sample of all channels with its spatial derivative.
fn sample_with_gradient(
    d: &DescriptorVolume,
    p: [f64; 3],
) -> ([f64; MIND_CHANNELS], [[f64; MIND_CHANNELS]; 3]) {
    let dims = d.dims();
    let ax = [0, 1, 2].map(|a| axis(dims[a], p[a]));
    let mut val = [0.0; MIND_CHANNELS];
    let mut grad = [[0.0; MIND_CHANNELS]; 3];
    for corner in 0..8 {
        let bit = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut idx = [0usize; 3];
        let mut w = [0.0; 3];
        let mut dw = [0.0; 3];
        for a in 0..3 {
            let (lo, hi, f, inside) = ax[a];
            if bit[a] == 1 {
                idx[a] = hi;
                w[a] = f;
                dw[a] = inside;
            } else {
                idx[a] = lo;
                w[a] = 1.0 - f;
                dw[a] = -inside;
            }
        }
        let weight = w[0] * w[1] * w[2];
        let dweight = [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]];
        let v = d.at(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]));
        for c in 0..MIND_CHANNELS {
            let vc = v[c] as f64;
            val[c] += weight * vc;
            for a in 0..3 {
                grad[a][c] += dweight[a] * vc;
            }
        }
    }
    (val, grad)
}

/// Instance-optimization objective on a fixed grid:
/// `mean_{x in mask} sum_c (M_c(x + u(x)) - F_c(x))^2
///  + reg_weight * (1/N) sum_x sum_axis |u(x + e_axis) - u(x)|^2`.
pub struct IoObjective<'a> {
    fixed: &'a DescriptorVolume,
    moving: &'a DescriptorVolume,
    voxels: Vec<usize>,
    reg_weight: f64,
}

impl<'a> IoObjective<'a> {
    /// `mask`, when given, restricts the data term.
    pub fn new(
        fixed: &'a DescriptorVolume,
        moving: &'a DescriptorVolume,
        mask: Option<&TrunkMask>,
        reg_weight: f64,
    ) -> Result<Self> {
        if fixed.dims() != moving.dims() {
            return Err(Error::DimMismatch {
                left: fixed.dims(),
                right: moving.dims(),
            });
        }
        let n: usize = fixed.dims().iter().product();
        let voxels: Vec<usize> = match mask {
            Some(m) => {
                if m.dims() != fixed.dims() {
                    return Err(Error::DimMismatch {
                        left: fixed.dims(),
                        right: m.dims(),
                    });
                }
                (0..n).filter(|&i| m.contains_index(i)).collect()
            }
            None => (0..n).collect(),
        };
        if voxels.is_empty() {
            return invalid("instance optimization mask is empty");
        }
        Ok(IoObjective {
            fixed,
            moving,
            voxels,
            reg_weight,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.fixed.dims()
    }

    /// Objective value and its gradient with respect to every vector of `u`.
    pub fn value_and_grad(&self, u: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
        let dims = self.dims();
        let n = u.len();
        let grid = Grid::unit(dims);
        let nd = self.voxels.len() as f64;
        let data: Vec<(f64, [f64; 3])> = self
            .voxels
            .par_iter()
            .map(|&i| {
                let c = grid.coords(i);
                let p = [0, 1, 2].map(|a| c[a] as f64 + u[i][a]);
                let (m, dm) = sample_with_gradient(self.moving, p);
                let f = self.fixed.at(i);
                let mut e = 0.0;
                let mut g = [0.0; 3];
                for ch in 0..MIND_CHANNELS {
                    let r = m[ch] - f[ch] as f64;
                    e += r * r;
                    for a in 0..3 {
                        g[a] += 2.0 * r * dm[a][ch];
                    }
                }
                (e, g.map(|v| v / nd))
            })
            .collect();
        let mut grad = vec![[0.0; 3]; n];
        let mut value = 0.0;
        for (&i, (e, g)) in self.voxels.iter().zip(&data) {
            value += e;
            grad[i] = *g;
        }
        value /= nd;

        if self.reg_weight > 0.0 {
            let k = self.reg_weight / n as f64;
            let strides = [1, dims[0], dims[0] * dims[1]];
            let mut reg = 0.0;
            for i in 0..n {
                let c = grid.coords(i);
                for a in 0..3 {
                    if c[a] + 1 < dims[a] {
                        let j = i + strides[a];
                        for comp in 0..3 {
                            let d = u[j][comp] - u[i][comp];
                            reg += d * d;
                            grad[i][comp] -= 2.0 * k * d;
                            grad[j][comp] += 2.0 * k * d;
                        }
                    }
                }
            }
            value += k * reg;
        }
        (value, grad)
    }

    pub fn value(&self, u: &[[f64; 3]]) -> f64 {
        self.value_and_grad(u).0
    }
}

/// Result of [`instance_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct IoOutcome {
    pub field: DisplacementField,
    /// Objective of the current iterate, starting with the initial value.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_HALVINGS: usize = 6;

/// Adam on the vectors of `init`. With step halving a step that raises the
/// objective is retried at half size (up to six times) and otherwise
/// discarded, so the trace never increases.
pub fn instance_optimize(
    fixed: &DescriptorVolume,
    moving: &DescriptorVolume,
    init: &DisplacementField,
    mask: Option<&TrunkMask>,
    cfg: &RegistrationConfig,
) -> Result<IoOutcome> {
    if init.dims() != fixed.dims() {
        return Err(Error::DimMismatch {
            left: init.dims(),
            right: fixed.dims(),
        });
    }
    let obj = IoObjective::new(fixed, moving, mask, cfg.io_reg_weight)?;
    let mut u = init.vectors().to_vec();
    let (mut value, mut grad) = obj.value_and_grad(&u);
    if !value.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            objective: value,
        });
    }
    let mut trace = vec![value];
    let mut evaluations = 1;
    let n = u.len();
    let mut m = vec![[0.0; 3]; n];
    let mut v = vec![[0.0; 3]; n];
    let mut scale = 1.0f64;
    for t in 1..=cfg.io_iters {
        let mut step = vec![[0.0; 3]; n];
        let (b1, b2) = (1.0 - ADAM_BETA1.powi(t as i32), 1.0 - ADAM_BETA2.powi(t as i32));
        for i in 0..n {
            for a in 0..3 {
                let g = grad[i][a];
                m[i][a] = ADAM_BETA1 * m[i][a] + (1.0 - ADAM_BETA1) * g;
                v[i][a] = ADAM_BETA2 * v[i][a] + (1.0 - ADAM_BETA2) * g * g;
                step[i][a] = cfg.io_lr * (m[i][a] / b1) / ((v[i][a] / b2).sqrt() + ADAM_EPS);
            }
        }
        let mut halvings = 0;
        loop {
            let cand: Vec<[f64; 3]> = u
                .iter()
                .zip(&step)
                .map(|(x, s)| [x[0] - scale * s[0], x[1] - scale * s[1], x[2] - scale * s[2]])
                .collect();
            let (cv, cg) = obj.value_and_grad(&cand);
            evaluations += 1;
            if !cv.is_finite() {
                return Err(Error::Divergence {
                    iteration: t,
                    objective: cv,
                });
            }
            if !cfg.step_halving || cv <= value {
                u = cand;
                value = cv;
                grad = cg;
                scale = (scale * 1.25).min(1.0);
                break;
            }
            halvings += 1;
            scale *= 0.5;
            if halvings == MAX_HALVINGS {
                break;
            }
        }
        trace.push(value);
    }
    Ok(IoOutcome {
        field: DisplacementField::new(init.dims(), init.spacing(), u)?,
        trace,
        evaluations,
    })
}

/// Wall-clock accounting and stage statistics of one registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runtime_s: f64,
    pub stage_s: BTreeMap<String, f64>,
    pub keypoints: usize,
    pub matched: usize,
    pub skipped: usize,
    pub io_iterations: usize,
    pub io_evaluations: usize,
    pub io_initial_objective: Option<f64>,
    pub io_final_objective: Option<f64>,
}

/// Working-grid field to the input grid. Pooled voxel `j` is centred on
/// input coordinate `2j + 0.5`, so `u(x) = 2 w((x - 0.5) / 2)`.
pub fn upsample_field(half: &DisplacementField, dims: [usize; 3], spacing: [f64; 3]) -> Result<DisplacementField> {
    let want = dims.map(|d| d.div_ceil(2));
    if half.dims() != want {
        return Err(Error::DimMismatch {
            left: half.dims(),
            right: want,
        });
    }
    let grid = Grid::new(dims, spacing)?;
    let vectors = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let w = half.sample(c.map(|x| (x as f64 - 0.5) / 2.0));
            w.map(|x| 2.0 * x)
        })
        .collect();
    DisplacementField::new(dims, spacing, vectors)
}

/// 2x pooled mask: a pooled voxel belongs if any of its children does.
fn pool_mask(m: &TrunkMask) -> Result<TrunkMask> {
    let dims = m.dims();
    let hd = dims.map(|d| d.div_ceil(2));
    let spacing = m.grid().spacing.map(|s| 2.0 * s);
    let hg = Grid::new(hd, spacing)?;
    let mut out = vec![false; hg.len()];
    for i in 0..m.grid().len() {
        if m.contains_index(i) {
            let c = m.grid().coords(i);
            out[hg.index(c[0] / 2, c[1] / 2, c[2] / 2)] = true;
        }
    }
    TrunkMask::new(hg, out)
}

/// Full pipeline. Returns a pull-back field on the fixed grid.
pub fn register_pair(
    fixed: &Volume,
    moving: &Volume,
    trunk: &TrunkMask,
    cfg: &RegistrationConfig,
) -> Result<(DisplacementField, RunReport)> {
    cfg.validate()?;
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch {
            left: fixed.dims(),
            right: moving.dims(),
        });
    }
    if trunk.dims() != fixed.dims() {
        return Err(Error::DimMismatch {
            left: trunk.dims(),
            right: fixed.dims(),
        });
    }
    let start = Instant::now();
    let mut stages = BTreeMap::new();
    let mut lap = Instant::now();
    let mut mark = |name: &str, stages: &mut BTreeMap<String, f64>| {
        stages.insert(name.to_string(), lap.elapsed().as_secs_f64());
        lap = Instant::now();
    };

    let [lo, hi] = cfg.clamp;
    let f = clamp_intensity(fixed, lo, hi)?;
    let m = clamp_intensity(moving, lo, hi)?;
    let fd = mind_descriptor(&f, &cfg.descriptors)?;
    let md = mind_descriptor(&m, &cfg.descriptors)?;
    mark("descriptors", &mut stages);

    let kps = foerstner_keypoints(&f, trunk, &cfg.keypoints)?;
    if kps.is_empty() {
        return Err(Error::RegistrationFailed("no keypoints found inside the trunk mask".into()));
    }
    mark("keypoints", &mut stages);

    let (wfd, wmd, wkps, wmask) = if cfg.half_resolution {
        let mut seen = BTreeSet::new();
        let mut pts = Vec::new();
        let mut scores = Vec::new();
        for (p, s) in kps.points.iter().zip(&kps.scores) {
            let h = p.map(|c| c / 2);
            if seen.insert(h) {
                pts.push(h);
                scores.push(*s);
            }
        }
        (
            fd.downsample2(),
            md.downsample2(),
            KeypointSet { points: pts, scores },
            pool_mask(trunk)?,
        )
    } else {
        (fd, md, kps.clone(), trunk.clone())
    };
    let wspacing = if cfg.half_resolution {
        fixed.spacing().map(|s| 2.0 * s)
    } else {
        fixed.spacing()
    };
    let wgrid = Grid::new(wfd.dims(), wspacing)?;

    let costs = discrete_match(&wfd, &wmd, &wkps, cfg.search_radius, cfg.quantization, cfg.match_patch_radius)?;
    if costs.len() < 4 {
        return Err(Error::RegistrationFailed(format!(
            "only {} keypoints usable for matching ({} skipped at the border)",
            costs.len(),
            costs.skipped
        )));
    }
    mark("matching", &mut stages);
    let sparse = coupled_select(&costs, cfg.coupling_alpha, cfg.coupling_iters, cfg.coupling_neighbours)?;
    mark("coupling", &mut stages);
    let dense = field::tps_densify(&sparse, wgrid, cfg.tps_lambda)?;
    mark("tps", &mut stages);

    let mut report = RunReport {
        runtime_s: 0.0,
        stage_s: BTreeMap::new(),
        keypoints: kps.len(),
        matched: costs.len(),
        skipped: costs.skipped,
        io_iterations: 0,
        io_evaluations: 0,
        io_initial_objective: None,
        io_final_objective: None,
    };
    let refined = if cfg.instance_optimization {
        let out = instance_optimize(&wfd, &wmd, &dense, Some(&wmask), cfg)?;
        report.io_iterations = out.trace.len() - 1;
        report.io_evaluations = out.evaluations;
        report.io_initial_objective = out.trace.first().copied();
        report.io_final_objective = out.trace.last().copied();
        out.field
    } else {
        dense
    };
    mark("instance_optimization", &mut stages);

    let full = if cfg.half_resolution {
        upsample_field(&refined, fixed.dims(), fixed.spacing())?
    } else {
        refined
    };
    let result = field::smooth_field(&full, cfg.smooth_window, cfg.smooth_repeats)?;
    mark("smoothing", &mut stages);
    report.stage_s = stages;
    report.runtime_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    Ok((result, report))
}
