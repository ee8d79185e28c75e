//! Separable filters on x-fastest scalar grids with edge-replicating borders.

use rayon::prelude::*;

/// Normalized Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Convolves every line along `axis` with a centered odd-length kernel.
pub fn convolve_axis(data: &mut [f64], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    if kernel.len() == 1 && kernel[0] == 1.0 {
        return;
    }
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let radius = (kernel.len() / 2) as isize;
    // Lines along `axis` are enumerated by their starting index.
    let starts = line_starts(dims, axis);
    let results: Vec<(usize, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let line: Vec<f64> = (0..n).map(|i| data[s + i * stride]).collect();
            let out = (0..n as isize)
                .map(|i| {
                    kernel
                        .iter()
                        .enumerate()
                        .map(|(k, w)| {
                            let j = (i + k as isize - radius).clamp(0, n as isize - 1);
                            w * line[j as usize]
                        })
                        .sum()
                })
                .collect();
            (s, out)
        })
        .collect();
    for (s, out) in results {
        for (i, v) in out.into_iter().enumerate() {
            data[s + i * stride] = v;
        }
    }
}

/// Flat index of the first voxel of every grid line running along `axis`.
pub(crate) fn line_starts(dims: [usize; 3], axis: usize) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    match axis {
        0 => (0..nz)
            .flat_map(|z| (0..ny).map(move |y| nx * (y + ny * z)))
            .collect(),
        1 => (0..nz)
            .flat_map(|z| (0..nx).map(move |x| x + nx * ny * z))
            .collect(),
        _ => (0..nx * ny).collect(),
    }
}

/// Isotropic Gaussian smoothing with sigma in voxels.
pub fn gaussian_smooth(data: &mut [f64], dims: [usize; 3], sigma: f64) {
    let k = gaussian_kernel(sigma);
    for axis in 0..3 {
        convolve_axis(data, dims, axis, &k);
    }
}

/// Box mean filter of odd width `window` along all three axes.
pub fn box_smooth(data: &mut [f64], dims: [usize; 3], window: usize) {
    debug_assert!(window % 2 == 1);
    let k = vec![1.0 / window as f64; window];
    for axis in 0..3 {
        convolve_axis(data, dims, axis, &k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn box_preserves_constants_and_mean_of_linear_interior() {
        let dims = [5, 4, 3];
        let mut c = vec![2.5; 60];
        box_smooth(&mut c, dims, 3);
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-12));

        let mut ramp: Vec<f64> = (0..60).map(|i| (i % 5) as f64).collect();
        box_smooth(&mut ramp, dims, 3);
        // Interior samples of a linear ramp are unchanged by a symmetric mean.
        assert!((ramp[2] - 2.0).abs() < 1e-12);
        // Edge replication pulls the border towards the interior.
        assert!((ramp[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}
