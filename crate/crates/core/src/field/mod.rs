//! Dense displacement fields and their algebra.
//!
//! Fields live on the fixed-image grid and hold displacements in voxel units.
//! Warping follows the pull-back convention `out(x) = moving(x + u(x))`, so
//! composing `f` after `g` gives `(f ∘ g)(x) = g(x) + f(x + g(x))`.

mod spectral;
mod tps;

pub use spectral::{bandlimited_to_dense, dense_to_bandlimited, BandLimitedField};
pub use tps::{tps_densify, SparseDisplacements, ThinPlateSpline};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::filter;
use crate::interp;
use crate::volume::{Grid, LabelMask, TrunkMask, Volume};

/// Smallest determinant admitted into `log` for SDlogJ.
pub const JACOBIAN_FLOOR: f64 = 1e-6;

/// Default scaling-and-squaring depth.
pub const DEFAULT_SQUARING_STEPS: u32 = 7;

/// Dense 3-vector field on a voxel grid, displacements in voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: [usize; 3],
    spacing: [f64; 3],
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], vectors: Vec<[f64; 3]>) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        if vectors.len() != grid.len() {
            return invalid(format!(
                "field has {} vectors but dims {dims:?} need {}",
                vectors.len(),
                grid.len()
            ));
        }
        if let Some(i) = vectors.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return invalid(format!("non-finite displacement at voxel {i}"));
        }
        Ok(DisplacementField {
            dims,
            spacing,
            vectors,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self::constant(dims, spacing, [0.0; 3])
    }

    pub fn constant(dims: [usize; 3], spacing: [f64; 3], t: [f64; 3]) -> Self {
        DisplacementField {
            dims,
            spacing,
            vectors: vec![t; dims.iter().product()],
        }
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        f: impl Fn([usize; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let grid = Grid::new(dims, spacing)?;
        let vectors = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(dims, spacing, vectors)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims, self.spacing).expect("validated on construction")
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vectors[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    /// Trilinear sample at a continuous voxel coordinate, edge-replicated.
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        interp::sample_vector(&self.vectors, self.dims, p)
    }

    pub fn scaled(&self, k: f64) -> Self {
        DisplacementField {
            dims: self.dims,
            spacing: self.spacing,
            vectors: self.vectors.iter().map(|v| v.map(|c| c * k)).collect(),
        }
    }

    /// Largest vector norm in voxels.
    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    /// Mean vector norm over the mask (or the whole grid).
    pub fn mean_norm(&self, mask: Option<&TrunkMask>) -> Result<f64> {
        let sel = selection(self.dims, mask)?;
        mean_over(&sel, |i| norm(self.vectors[i]))
    }

    /// Sum of absolute forward differences over all axes and components.
    pub fn total_variation(&self) -> f64 {
        let [nx, ny, nz] = self.dims;
        let strides = [1, nx, nx * ny];
        let mut tv = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    let c = [x, y, z];
                    for a in 0..3 {
                        if c[a] + 1 < self.dims[a] {
                            let j = i + strides[a];
                            for k in 0..3 {
                                tv += (self.vectors[j][k] - self.vectors[i][k]).abs();
                            }
                        }
                    }
                }
            }
        }
        tv
    }

    fn check_same_dims(&self, other: &DisplacementField) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    /// Per-component planar copy (`ux` plane, `uy` plane, `uz` plane).
    fn planes(&self) -> [Vec<f64>; 3] {
        [0, 1, 2].map(|c| self.vectors.iter().map(|v| v[c]).collect())
    }

    fn from_planes(dims: [usize; 3], spacing: [f64; 3], planes: &[Vec<f64>; 3]) -> Self {
        DisplacementField {
            dims,
            spacing,
            vectors: (0..planes[0].len())
                .map(|i| [planes[0][i], planes[1][i], planes[2][i]])
                .collect(),
        }
    }
}

/// Stationary velocity field; exponentiated into a displacement by
/// [`exp_svf`].
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField(DisplacementField);

impl VelocityField {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], vectors: Vec<[f64; 3]>) -> Result<Self> {
        DisplacementField::new(dims, spacing, vectors).map(VelocityField)
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        VelocityField(DisplacementField::zeros(dims, spacing))
    }

    pub fn constant(dims: [usize; 3], spacing: [f64; 3], t: [f64; 3]) -> Self {
        VelocityField(DisplacementField::constant(dims, spacing, t))
    }

    /// Reinterprets a vector field as a velocity.
    pub fn from_field(f: DisplacementField) -> Self {
        VelocityField(f)
    }

    pub fn as_field(&self) -> &DisplacementField {
        &self.0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims
    }

    pub fn scaled(&self, k: f64) -> Self {
        VelocityField(self.0.scaled(k))
    }

    pub fn neg(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.0.max_norm()
    }
}

/// Sampling scheme for [`warp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Trilinear,
    Nearest,
}

#[inline]
pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn coord(c: [usize; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

fn selection(dims: [usize; 3], mask: Option<&TrunkMask>) -> Result<Vec<usize>> {
    let n: usize = dims.iter().product();
    match mask {
        Some(m) => {
            if m.dims() != dims {
                return Err(Error::DimMismatch {
                    left: dims,
                    right: m.dims(),
                });
            }
            Ok((0..n).filter(|&i| m.contains_index(i)).collect())
        }
        None => Ok((0..n).collect()),
    }
}

fn mean_over(sel: &[usize], f: impl Fn(usize) -> f64) -> Result<f64> {
    if sel.is_empty() {
        return invalid("selection mask is empty");
    }
    Ok(sel.iter().map(|&i| f(i)).sum::<f64>() / sel.len() as f64)
}

/// Pull-back warp: `out(x) = moving(x + u(x))` on the field's grid. Samples
/// that fall outside the moving volume take `fill`.
pub fn warp(moving: &Volume, field: &DisplacementField, interp: Interpolation, fill: f32) -> Result<Volume> {
    let grid = field.grid();
    let md = moving.dims();
    let data: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = add(coord(grid.coords(i)), field.vectors[i]);
            match interp {
                Interpolation::Trilinear => interp::sample(moving.data(), md, p)
                    .map(|v| v as f32)
                    .unwrap_or(fill),
                Interpolation::Nearest => interp::nearest_index(md, p)
                    .map(|j| moving.data()[j])
                    .unwrap_or(fill),
            }
        })
        .collect();
    Volume::new(grid, data)
}

/// Nearest-neighbour warp of a label image; outside samples become background.
pub fn warp_labels(labels: &LabelMask, field: &DisplacementField) -> Result<LabelMask> {
    let grid = field.grid();
    let ld = labels.dims();
    let out = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = add(coord(grid.coords(i)), field.vectors[i]);
            interp::nearest_index(ld, p)
                .map(|j| labels.labels()[j])
                .unwrap_or(0)
        })
        .collect();
    LabelMask::new(grid, out)
}

/// `(f ∘ g)(x) = g(x) + f(x + g(x))`: warping with the result equals warping
/// by `f` first and then by `g`.
pub fn compose(f: &DisplacementField, g: &DisplacementField) -> Result<DisplacementField> {
    f.check_same_dims(g)?;
    let grid = g.grid();
    let vectors = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let gi = g.vectors[i];
            add(gi, f.sample(add(coord(grid.coords(i)), gi)))
        })
        .collect();
    Ok(DisplacementField {
        dims: g.dims,
        spacing: g.spacing,
        vectors,
    })
}

/// Per-voxel Jacobian determinants of `x ↦ x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMap {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub det: Vec<f64>,
}

impl JacobianMap {
    pub fn min(&self) -> f64 {
        self.det.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_volume(&self) -> Result<Volume> {
        Volume::new(
            Grid::new(self.dims, self.spacing)?,
            self.det.iter().map(|&d| d as f32).collect(),
        )
    }
}

/// Central differences in the interior and one-sided differences on the
/// faces; derivatives are in voxel units.
pub fn jacobian_determinant(field: &DisplacementField) -> Result<JacobianMap> {
    let dims = field.dims;
    if dims.iter().any(|&d| d < 3) {
        return invalid(format!("jacobian needs at least 3 voxels per axis, got {dims:?}"));
    }
    let grid = field.grid();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let u = &field.vectors;
    let det = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            // jac[k][a] = d u_k / d x_a
            let mut jac = [[0.0f64; 3]; 3];
            for a in 0..3 {
                let (lo, hi, h) = if c[a] == 0 {
                    (i, i + strides[a], 1.0)
                } else if c[a] + 1 == dims[a] {
                    (i - strides[a], i, 1.0)
                } else {
                    (i - strides[a], i + strides[a], 2.0)
                };
                for (k, row) in jac.iter_mut().enumerate() {
                    row[a] = (u[hi][k] - u[lo][k]) / h;
                }
            }
            for (k, row) in jac.iter_mut().enumerate() {
                row[k] += 1.0;
            }
            det3(&jac)
        })
        .collect();
    Ok(JacobianMap {
        dims,
        spacing: field.spacing,
        det,
    })
}

#[inline]
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Standard deviation of `log(max(det J, 1e-6))` over the interior voxels
/// (one-voxel margin) intersected with `mask`.
pub fn sdlogj(field: &DisplacementField, mask: Option<&TrunkMask>) -> Result<f64> {
    let jac = jacobian_determinant(field)?;
    let interior = TrunkMask::interior(field.grid(), 1);
    let region = match mask {
        Some(m) => interior.intersect(m)?,
        None => interior,
    };
    let logs: Vec<f64> = (0..jac.det.len())
        .filter(|&i| region.contains_index(i))
        .map(|i| jac.det[i].max(JACOBIAN_FLOOR).ln())
        .collect();
    if logs.is_empty() {
        return invalid("SDlogJ mask selects no interior voxels");
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Scaling and squaring: start from `v / 2^steps` and self-compose `steps`
/// times.
pub fn exp_svf(v: &VelocityField, steps: u32) -> Result<DisplacementField> {
    if steps == 0 {
        return invalid("scaling and squaring needs at least one step");
    }
    let mut phi = v.0.scaled(1.0 / (1u64 << steps) as f64);
    for _ in 0..steps {
        phi = compose(&phi, &phi)?;
    }
    Ok(phi)
}

/// Square root of `exp(v)`, i.e. `exp(v / 2)`.
pub fn sqrt_field(v: &VelocityField, steps: u32) -> Result<DisplacementField> {
    exp_svf(&v.scaled(0.5), steps)
}

/// Two-step inverse-consistent composition `√Φ ∘ Ψ ∘ √Φ` with
/// `√Φ = exp(phi_v / 2)` and `Ψ = exp(psi_v)`.
pub fn tsc_compose(phi_v: &VelocityField, psi_v: &VelocityField, steps: u32) -> Result<DisplacementField> {
    phi_v.0.check_same_dims(&psi_v.0)?;
    let root = sqrt_field(phi_v, steps)?;
    let psi = exp_svf(psi_v, steps)?;
    compose(&root, &compose(&psi, &root)?)
}

/// Mean norm (voxels) of `f_ab ∘ f_ba`, the residual of a round trip that
/// should be the identity. Averaged over interior voxels (one-voxel margin)
/// inside `mask` whose first displacement stays in the grid; elsewhere the
/// composition reads extrapolated data.
pub fn inverse_consistency_error(
    f_ab: &DisplacementField,
    f_ba: &DisplacementField,
    mask: Option<&TrunkMask>,
) -> Result<f64> {
    f_ab.check_same_dims(f_ba)?;
    let round = compose(f_ab, f_ba)?;
    let grid = f_ab.grid();
    let interior = TrunkMask::interior(grid, 1);
    let sel: Vec<usize> = selection(grid.dims, mask)?
        .into_iter()
        .filter(|&i| {
            interior.contains_index(i) && grid.contains(add(coord(grid.coords(i)), f_ba.vectors[i]))
        })
        .collect();
    mean_over(&sel, |i| norm(round.vectors[i]))
}

/// Box-mean smoothing of each component, `repeats` times, edge-replicated.
pub fn smooth_field(f: &DisplacementField, window: usize, repeats: usize) -> Result<DisplacementField> {
    if window == 0 || window % 2 == 0 {
        return invalid(format!("smoothing window must be odd and positive, got {window}"));
    }
    if window == 1 || repeats == 0 {
        return Ok(f.clone());
    }
    let mut planes = f.planes();
    for plane in planes.iter_mut() {
        for _ in 0..repeats {
            filter::box_smooth(plane, f.dims, window);
        }
    }
    Ok(DisplacementField::from_planes(f.dims, f.spacing, &planes))
}

pub fn smooth_velocity(v: &VelocityField, window: usize, repeats: usize) -> Result<VelocityField> {
    smooth_field(&v.0, window, repeats).map(VelocityField)
}

/// Gaussian-smoothed white noise rescaled so its largest vector norm equals
/// `max_norm`. `sigma` is in voxels.
pub fn random_smooth_velocity<R: Rng + ?Sized>(
    dims: [usize; 3],
    spacing: [f64; 3],
    sigma: f64,
    max_norm: f64,
    rng: &mut R,
) -> Result<VelocityField> {
    let n: usize = dims.iter().product();
    let mut planes: [Vec<f64>; 3] = [0, 1, 2].map(|_| Vec::new());
    for plane in planes.iter_mut() {
        *plane = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        filter::gaussian_smooth(plane, dims, sigma);
    }
    let f = DisplacementField::from_planes(dims, spacing, &planes);
    let m = f.max_norm();
    let k = if m > 0.0 { max_norm / m } else { 0.0 };
    Ok(VelocityField(f.scaled(k)))
}
