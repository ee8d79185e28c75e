//! Thin-plate spline densification of sparse displacements.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use super::DisplacementField;
use crate::error::{invalid, Error, Result};
use crate::volume::Grid;

/// Displacements known at scattered fixed-grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDisplacements {
    points: Vec<[f64; 3]>,
    vectors: Vec<[f64; 3]>,
}

impl SparseDisplacements {
    pub fn new(points: Vec<[f64; 3]>, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() != vectors.len() {
            return invalid(format!(
                "{} points but {} displacement vectors",
                points.len(),
                vectors.len()
            ));
        }
        if points.iter().chain(&vectors).flatten().any(|c| !c.is_finite()) {
            return invalid("sparse displacements must be finite");
        }
        Ok(SparseDisplacements { points, vectors })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fitted spline `u(p) = a0 + A p + sum_k w_k |p - c_k|`, one per component.
#[derive(Debug, Clone)]
pub struct ThinPlateSpline {
    centers: Vec<[f64; 3]>,
    /// Per center: radial weights for the three components.
    weights: Vec<[f64; 3]>,
    /// Rows: constant, x, y, z; columns: components.
    affine: [[f64; 3]; 4],
}

/// Relative spread below which a point cloud counts as coplanar.
const COPLANAR_TOL: f64 = 1e-9;

impl ThinPlateSpline {
    /// Solves the bordered TPS system with `lambda` on the kernel diagonal.
    pub fn fit(sd: &SparseDisplacements, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("TPS lambda must be finite and nonnegative, got {lambda}"));
        }
        let k = sd.len();
        if k < 4 {
            return Err(Error::Degenerate(format!("TPS needs at least 4 points, got {k}")));
        }
        check_not_coplanar(&sd.points)?;

        let n = k + 4;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] = dist(sd.points[i], sd.points[j]);
            }
            a[(i, i)] += lambda;
            let p = sd.points[i];
            for (c, v) in [1.0, p[0], p[1], p[2]].into_iter().enumerate() {
                a[(i, k + c)] = v;
                a[(k + c, i)] = v;
            }
        }
        let mut b = DMatrix::<f64>::zeros(n, 3);
        for (i, v) in sd.vectors.iter().enumerate() {
            for c in 0..3 {
                b[(i, c)] = v[c];
            }
        }
        let x = a
            .clone()
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("TPS system is singular".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("TPS solution is not finite".into()));
        }
        let residual = (&a * &x - &b).abs().max();
        if residual > 1e-6 * (1.0 + b.abs().max()) {
            return Err(Error::Degenerate(format!(
                "TPS system is ill-conditioned (residual {residual:.3e})"
            )));
        }
        Ok(ThinPlateSpline {
            centers: sd.points.clone(),
            weights: (0..k).map(|i| [x[(i, 0)], x[(i, 1)], x[(i, 2)]]).collect(),
            affine: [0, 1, 2, 3].map(|r| [x[(k + r, 0)], x[(k + r, 1)], x[(k + r, 2)]]),
        })
    }

    pub fn evaluate(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = a[0][c] + a[1][c] * p[0] + a[2][c] * p[1] + a[3][c] * p[2];
        }
        for (ctr, w) in self.centers.iter().zip(&self.weights) {
            let r = dist(p, *ctr);
            out[0] += w[0] * r;
            out[1] += w[1] * r;
            out[2] += w[2] * r;
        }
        out
    }
}

#[inline]
fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Rejects point sets whose covariance has a vanishing eigenvalue.
fn check_not_coplanar(points: &[[f64; 3]]) -> Result<()> {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for a in 0..3 {
            mean[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]) / n;
            }
        }
    }
    let eig = cov.symmetric_eigenvalues();
    let max = eig.max();
    if max <= 0.0 || eig.min() <= COPLANAR_TOL * max {
        return Err(Error::Degenerate("TPS control points are coplanar or collinear".into()));
    }
    Ok(())
}

/// Dense field from a TPS fit; with `lambda = 0` it interpolates the control
/// vectors exactly.
pub fn tps_densify(sd: &SparseDisplacements, grid: Grid, lambda: f64) -> Result<DisplacementField> {
    if let Some(i) = sd.points.iter().position(|p| !grid.contains(*p)) {
        return invalid(format!("control point {i} at {:?} lies outside the grid", sd.points[i]));
    }
    let tps = ThinPlateSpline::fit(sd, lambda)?;
    let vectors = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            tps.evaluate([c[0] as f64, c[1] as f64, c[2] as f64])
        })
        .collect();
    DisplacementField::new(grid.dims, grid.spacing, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dims: [usize; 3], seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [0, 1, 2].map(|a| rng.random_range(0.0..(dims[a] - 1) as f64)))
            .collect()
    }

    #[test]
    fn constant_vectors_give_constant_field() {
        let g = Grid::unit([10, 9, 8]);
        let pts = random_points(12, g.dims, 1);
        let sd = SparseDisplacements::new(pts, vec![[1.0, -2.0, 0.5]; 12]).unwrap();
        let f = tps_densify(&sd, g, 0.0).unwrap();
        for v in f.vectors() {
            assert!((v[0] - 1.0).abs() < 1e-8 && (v[1] + 2.0).abs() < 1e-8 && (v[2] - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolates_control_points_exactly() {
        let pts = random_points(30, [20; 3], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vecs: Vec<[f64; 3]> = (0..30).map(|_| [0, 1, 2].map(|_| rng.random_range(-3.0..3.0))).collect();
        let sd = SparseDisplacements::new(pts.clone(), vecs.clone()).unwrap();
        let tps = ThinPlateSpline::fit(&sd, 0.0).unwrap();
        for (p, v) in pts.iter().zip(&vecs) {
            let e = tps.evaluate(*p);
            for c in 0..3 {
                assert!((e[c] - v[c]).abs() < 1e-4);
            }
        }
        // regularization trades exactness for smoothness
        let smooth = ThinPlateSpline::fit(&sd, 50.0).unwrap();
        let err: f64 = pts.iter().zip(&vecs).map(|(p, v)| (smooth.evaluate(*p)[0] - v[0]).abs()).sum();
        assert!(err > 1e-3);
    }

    #[test]
    fn reproduces_affine_maps() {
        let g = Grid::unit([16, 14, 12]);
        let a = [[0.05, -0.02, 0.01], [0.03, 0.04, -0.05], [-0.01, 0.02, 0.06]];
        let t = [1.0, -0.5, 2.0];
        let map = |p: [f64; 3]| [0, 1, 2].map(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + t[r]);
        let pts = random_points(10, g.dims, 4);
        let sd = SparseDisplacements::new(pts.clone(), pts.iter().map(|p| map(*p)).collect()).unwrap();
        let f = tps_densify(&sd, g, 0.0).unwrap();
        for i in 0..g.len() {
            let c = g.coords(i);
            let want = map([c[0] as f64, c[1] as f64, c[2] as f64]);
            for k in 0..3 {
                assert!((f.vectors()[i][k] - want[k]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn degenerate_configurations_are_rejected() {
        let g = Grid::unit([8; 3]);
        let three = SparseDisplacements::new(random_points(3, g.dims, 5), vec![[0.0; 3]; 3]).unwrap();
        assert!(matches!(tps_densify(&three, g, 0.0), Err(Error::Degenerate(_))));

        let planar: Vec<[f64; 3]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64, 2.0]).collect();
        let sd = SparseDisplacements::new(planar, vec![[1.0; 3]; 9]).unwrap();
        assert!(matches!(tps_densify(&sd, g, 0.0), Err(Error::Degenerate(_))));

        let mut dup = random_points(6, g.dims, 6);
        dup.push(dup[0]);
        let mut vecs = vec![[0.0; 3]; 7];
        vecs[6] = [1.0, 0.0, 0.0];
        let sd = SparseDisplacements::new(dup, vecs).unwrap();
        assert!(matches!(ThinPlateSpline::fit(&sd, 0.0), Err(Error::Degenerate(_))));

        let outside = SparseDisplacements::new(vec![[9.0, 0.0, 0.0]; 4], vec![[0.0; 3]; 4]).unwrap();
        assert!(matches!(tps_densify(&outside, g, 0.0), Err(Error::InvalidArgument(_))));
        assert!(SparseDisplacements::new(vec![[0.0; 3]], vec![]).is_err());
    }
}
