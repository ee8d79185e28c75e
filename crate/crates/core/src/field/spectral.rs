//! Band-limited displacement fields: a small spectrum patch of low
//! frequencies that expands to a dense field by zero-padding in Fourier space.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::DisplacementField;
use crate::error::{invalid, Result};
use crate::filter::line_starts;

/// Low-frequency spectrum patch of a real 3-vector field.
///
/// `spectrum[c]` holds the unnormalized DFT of component `c` of the spatial
/// patch, x-fastest over `patch_dims`, frequencies in standard FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimitedField {
    patch_dims: [usize; 3],
    full_dims: [usize; 3],
    spacing: [f64; 3],
    spectrum: [Vec<Complex64>; 3],
}

impl BandLimitedField {
    /// Builds the field from a real spatial patch.
    pub fn from_patch(patch: &DisplacementField, full_dims: [usize; 3]) -> Result<Self> {
        let patch_dims = patch.dims();
        check_dims(patch_dims, full_dims)?;
        let spectrum = [0, 1, 2].map(|c| {
            let mut buf: Vec<Complex64> = patch.vectors().iter().map(|v| Complex64::new(v[c], 0.0)).collect();
            fft3(&mut buf, patch_dims, false);
            buf
        });
        Ok(BandLimitedField {
            patch_dims,
            full_dims,
            spacing: patch.spacing(),
            spectrum,
        })
    }

    /// Builds the field from raw spectra, projecting each onto the Hermitian
    /// subspace so the spatial field is real.
    pub fn from_spectrum(
        patch_dims: [usize; 3],
        full_dims: [usize; 3],
        spacing: [f64; 3],
        spectrum: [Vec<Complex64>; 3],
    ) -> Result<Self> {
        check_dims(patch_dims, full_dims)?;
        let n: usize = patch_dims.iter().product();
        if spectrum.iter().any(|s| s.len() != n) {
            return invalid(format!("spectrum length must equal {n} for patch {patch_dims:?}"));
        }
        if spectrum.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("spectrum contains non-finite values");
        }
        let spectrum = spectrum.map(|s| hermitian_projection(&s, patch_dims));
        Ok(BandLimitedField {
            patch_dims,
            full_dims,
            spacing,
            spectrum,
        })
    }

    pub fn patch_dims(&self) -> [usize; 3] {
        self.patch_dims
    }

    pub fn full_dims(&self) -> [usize; 3] {
        self.full_dims
    }

    pub fn spectrum(&self, component: usize) -> &[Complex64] {
        &self.spectrum[component]
    }

    /// Real spatial patch represented by the spectrum.
    pub fn patch(&self) -> DisplacementField {
        let planes = self.spectrum.clone().map(|mut s| {
            fft3(&mut s, self.patch_dims, true);
            let k = 1.0 / s.len() as f64;
            s.iter().map(|z| z.re * k).collect::<Vec<f64>>()
        });
        DisplacementField::from_planes(self.patch_dims, self.spacing, &planes)
    }

    /// Largest relative deviation between the two spectra.
    pub fn relative_difference(&self, other: &BandLimitedField) -> f64 {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for c in 0..3 {
            for (a, b) in self.spectrum[c].iter().zip(&other.spectrum[c]) {
                num = num.max((a - b).norm());
                den = den.max(a.norm());
            }
        }
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

fn check_dims(patch: [usize; 3], full: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| patch[a] == 0 || patch[a] > full[a]) {
        return invalid(format!("patch dims {patch:?} must be positive and within full dims {full:?}"));
    }
    Ok(())
}

/// Dense field `(N/n) * IFFT_N(pad(S))`; a constant patch maps to the same
/// constant.
pub fn bandlimited_to_dense(s: &BandLimitedField, full_dims: [usize; 3]) -> Result<DisplacementField> {
    check_dims(s.patch_dims, full_dims)?;
    let ratio = full_dims.iter().product::<usize>() as f64 / s.patch_dims.iter().product::<usize>() as f64;
    let planes = [0, 1, 2].map(|c| {
        let mut buf = resize_spectrum(&s.spectrum[c], s.patch_dims, full_dims);
        fft3(&mut buf, full_dims, true);
        let k = ratio / buf.len() as f64;
        buf.iter().map(|z| z.re * k).collect::<Vec<f64>>()
    });
    Ok(DisplacementField::from_planes(full_dims, s.spacing, &planes))
}

/// Low-pass projection of `f` onto `patch_dims` frequencies.
pub fn dense_to_bandlimited(f: &DisplacementField, patch_dims: [usize; 3]) -> Result<BandLimitedField> {
    let full_dims = f.dims();
    check_dims(patch_dims, full_dims)?;
    let ratio = patch_dims.iter().product::<usize>() as f64 / full_dims.iter().product::<usize>() as f64;
    let spectrum = [0, 1, 2].map(|c| {
        let mut buf: Vec<Complex64> = f.vectors().iter().map(|v| Complex64::new(v[c], 0.0)).collect();
        fft3(&mut buf, full_dims, false);
        resize_spectrum(&buf, full_dims, patch_dims)
            .into_iter()
            .map(|z| z * ratio)
            .collect()
    });
    Ok(BandLimitedField {
        patch_dims,
        full_dims,
        spacing: f.spacing(),
        spectrum,
    })
}

/// In-place unnormalized 3D DFT (inverse when `inverse`), axis by axis.
pub(crate) fn fft3(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for s in line_starts(dims, axis) {
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[s + i * strides[axis]];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                data[s + i * strides[axis]] = *v;
            }
        }
    }
}

/// Signed frequency of DFT bin `k` on an axis of length `n`; the even-size
/// Nyquist bin is reported as `+n/2`.
fn frequency(k: usize, n: usize) -> i64 {
    if 2 * k <= n {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn bin(f: i64, n: usize) -> usize {
    f.rem_euclid(n as i64) as usize
}

/// Sparse 1D resize map between spectrum axes of length `from` and `to`,
/// as `(src, dst, weight)` triples. Padding splits an unmatched Nyquist bin
/// evenly between `±from/2`; cropping folds `±to/2` back together, so
/// crop after pad is the identity.
fn axis_map(from: usize, to: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    if from == to {
        return (0..from).map(|k| (k, k, 1.0)).collect();
    }
    if from < to {
        for k in 0..from {
            let f = frequency(k, from);
            if from % 2 == 0 && 2 * f == from as i64 {
                out.push((k, bin(f, to), 0.5));
                out.push((k, bin(-f, to), 0.5));
            } else {
                out.push((k, bin(f, to), 1.0));
            }
        }
    } else {
        for k in 0..from {
            let f = frequency(k, from);
            if f.abs() <= to as i64 / 2 {
                out.push((k, bin(f, to), 1.0));
            }
        }
    }
    out
}

/// Resizes a spectrum between grids, centered on DC.
fn resize_spectrum(src: &[Complex64], from: [usize; 3], to: [usize; 3]) -> Vec<Complex64> {
    let maps = [0, 1, 2].map(|a| axis_map(from[a], to[a]));
    let mut out = vec![Complex64::new(0.0, 0.0); to.iter().product()];
    for &(kz, jz, wz) in &maps[2] {
        for &(ky, jy, wy) in &maps[1] {
            for &(kx, jx, wx) in &maps[0] {
                let s = src[kx + from[0] * (ky + from[1] * kz)];
                out[jx + to[0] * (jy + to[1] * jz)] += s * (wx * wy * wz);
            }
        }
    }
    out
}

/// Averages each bin with the conjugate of its mirror so the inverse DFT is
/// real.
fn hermitian_projection(s: &[Complex64], dims: [usize; 3]) -> Vec<Complex64> {
    let mirror = |k: usize, n: usize| (n - k) % n;
    let mut out = Vec::with_capacity(s.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let m = mirror(x, dims[0]) + dims[0] * (mirror(y, dims[1]) + dims[1] * mirror(z, dims[2]));
                let i = x + dims[0] * (y + dims[1] * z);
                out.push((s[i] + s[m].conj()) * 0.5);
            }
        }
    }
    out
}
