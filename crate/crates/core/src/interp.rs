//! Trilinear and nearest-neighbour sampling on x-fastest grids.

/// Linear interpolation stencil along one axis: lower index, upper index and
/// the weight of the upper sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisStencil {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Stencil for a coordinate already known to lie in `[0, n-1]`. Values outside
/// are clamped, which gives edge replication.
#[inline]
pub(crate) fn axis_stencil(n: usize, x: f64) -> AxisStencil {
    let max = (n - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max) };
    let lo = x.floor() as usize;
    if lo + 1 >= n {
        AxisStencil {
            lo: n - 1,
            hi: n - 1,
            frac: 0.0,
        }
    } else {
        AxisStencil {
            lo,
            hi: lo + 1,
            frac: x - lo as f64,
        }
    }
}

/// True when `p` lies inside the sampling domain `[0, n-1]` on every axis.
#[inline]
pub fn in_domain(dims: [usize; 3], p: [f64; 3]) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (dims[a] - 1) as f64)
}

/// Eight corner indices and weights of a trilinear stencil.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

#[inline]
pub(crate) fn stencil(dims: [usize; 3], p: [f64; 3]) -> Stencil {
    let sx = axis_stencil(dims[0], p[0]);
    let sy = axis_stencil(dims[1], p[1]);
    let sz = axis_stencil(dims[2], p[2]);
    let nx = dims[0];
    let nxy = dims[0] * dims[1];
    let mut idx = [0usize; 8];
    let mut w = [0f64; 8];
    let mut k = 0;
    for (zi, wz) in [(sz.lo, 1.0 - sz.frac), (sz.hi, sz.frac)] {
        for (yi, wy) in [(sy.lo, 1.0 - sy.frac), (sy.hi, sy.frac)] {
            for (xi, wx) in [(sx.lo, 1.0 - sx.frac), (sx.hi, sx.frac)] {
                idx[k] = xi + nx * yi + nxy * zi;
                w[k] = wx * wy * wz;
                k += 1;
            }
        }
    }
    Stencil { idx, w }
}

/// Trilinear sample of a scalar grid with edge replication outside the domain.
#[inline]
pub fn sample_clamped(data: &[f32], dims: [usize; 3], p: [f64; 3]) -> f64 {
    let s = stencil(dims, p);
    let mut acc = 0.0;
    for k in 0..8 {
        acc += s.w[k] * data[s.idx[k]] as f64;
    }
    acc
}

/// Trilinear sample of a scalar grid; `None` outside `[0, n-1]`.
#[inline]
pub fn sample(data: &[f32], dims: [usize; 3], p: [f64; 3]) -> Option<f64> {
    in_domain(dims, p).then(|| sample_clamped(data, dims, p))
}

/// Trilinear sample of a vector grid with edge replication.
#[inline]
pub fn sample_vector(data: &[[f64; 3]], dims: [usize; 3], p: [f64; 3]) -> [f64; 3] {
    let s = stencil(dims, p);
    let mut acc = [0.0; 3];
    for k in 0..8 {
        let v = data[s.idx[k]];
        acc[0] += s.w[k] * v[0];
        acc[1] += s.w[k] * v[1];
        acc[2] += s.w[k] * v[2];
    }
    acc
}

/// Index of the nearest voxel, or `None` when `p` rounds outside the grid.
#[inline]
pub fn nearest_index(dims: [usize; 3], p: [f64; 3]) -> Option<usize> {
    let mut c = [0usize; 3];
    for a in 0..3 {
        let r = p[a].round();
        if !(r >= 0.0 && r <= (dims[a] - 1) as f64) {
            return None;
        }
        c[a] = r as usize;
    }
    Some(c[0] + dims[0] * (c[1] + dims[1] * c[2]))
}
