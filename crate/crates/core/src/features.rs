//! Förstner interest points and MIND-SSC self-similarity descriptors.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter;
use crate::interp;
use crate::volume::{Grid, TrunkMask, Volume};

/// Number of MIND-SSC channels.
pub const MIND_CHANNELS: usize = 12;

/// Floor on the per-voxel noise estimate.
pub const SIGMA_FLOOR: f64 = 1e-6;

const EPS: f64 = 1e-12;

/// Corner measure computed from the smoothed structure tensor `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerMeasure {
    /// `det S / trace(adj S)`, i.e. `1 / trace(S^-1)`.
    #[default]
    InverseTrace,
    /// `det S / trace(S)^2`; scale-free, so flat noisy regions rank high.
    DetOverTraceSquared,
}

/// Keypoint detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeypointParams {
    pub sigma: f64,
    pub nms_radius: usize,
    pub max_count: usize,
    pub measure: CornerMeasure,
}

impl Default for KeypointParams {
    fn default() -> Self {
        KeypointParams {
            sigma: 1.4,
            nms_radius: 3,
            max_count: 2048,
            measure: CornerMeasure::InverseTrace,
        }
    }
}

/// Distinctive fixed-grid voxels, strongest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub points: Vec<[usize; 3]>,
    pub scores: Vec<f64>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    /// `x,y,z,score` per line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("# x,y,z,score\n");
        for (p, s) in self.points.iter().zip(&self.scores) {
            out.push_str(&format!("{},{},{},{s:e}\n", p[0], p[1], p[2]));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Per-voxel corner score on the whole grid.
pub fn corner_scores(v: &Volume, sigma: f64, measure: CornerMeasure) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return invalid(format!("structure tensor sigma must be positive, got {sigma}"));
    }
    let grid = *v.grid();
    let dims = grid.dims;
    let sp = grid.spacing;
    let data = v.data();
    let strides = [1, dims[0], dims[0] * dims[1]];

    let grads: Vec<[f64; 3]> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            [0, 1, 2].map(|a| {
                let lo = if c[a] > 0 { i - strides[a] } else { i };
                let hi = if c[a] + 1 < dims[a] { i + strides[a] } else { i };
                let h = (hi - lo) / strides[a];
                if h == 0 {
                    0.0
                } else {
                    (data[hi] as f64 - data[lo] as f64) / (h as f64 * sp[a])
                }
            })
        })
        .collect();

    // xx, xy, xz, yy, yz, zz
    const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let tensor: Vec<Vec<f64>> = PAIRS
        .iter()
        .map(|&(a, b)| {
            let mut t: Vec<f64> = grads.iter().map(|g| g[a] * g[b]).collect();
            filter::gaussian_smooth(&mut t, dims, sigma);
            t
        })
        .collect();

    Ok((0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (xx, xy, xz, yy, yz, zz) = (tensor[0][i], tensor[1][i], tensor[2][i], tensor[3][i], tensor[4][i], tensor[5][i]);
            let det = xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz);
            let score = match measure {
                CornerMeasure::InverseTrace => {
                    let adj_trace = (yy * zz - yz * yz) + (xx * zz - xz * xz) + (xx * yy - xy * xy);
                    det / (adj_trace + EPS)
                }
                CornerMeasure::DetOverTraceSquared => {
                    let tr = xx + yy + zz;
                    det / (tr * tr + EPS)
                }
            };
            score.max(0.0)
        })
        .collect())
}

/// Corner-score maxima inside `mask`, greedily thinned so that accepted points
/// are at least `nms_radius` apart in Chebyshev distance.
pub fn foerstner_keypoints(v: &Volume, mask: &TrunkMask, params: &KeypointParams) -> Result<KeypointSet> {
    if params.nms_radius < 1 {
        return invalid("nms_radius must be at least 1");
    }
    if mask.dims() != v.dims() {
        return Err(Error::DimMismatch {
            left: v.dims(),
            right: mask.dims(),
        });
    }
    if mask.count() == 0 {
        return invalid("keypoint mask is empty");
    }
    let grid = *v.grid();
    let scores = corner_scores(v, params.sigma, params.measure)?;
    let peak = (0..grid.len())
        .filter(|&i| mask.contains_index(i))
        .map(|i| scores[i])
        .fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Ok(KeypointSet::default());
    }
    let floor = peak * 1e-9;
    let mut order: Vec<usize> = (0..grid.len())
        .filter(|&i| mask.contains_index(i) && scores[i] > floor)
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let reach = params.nms_radius as isize - 1;
    let mut blocked = vec![false; grid.len()];
    let mut out = KeypointSet::default();
    for i in order {
        if out.len() >= params.max_count {
            break;
        }
        if blocked[i] {
            continue;
        }
        let c = grid.coords(i);
        out.points.push(c);
        out.scores.push(scores[i]);
        for_each_in_cube(grid.dims, c, reach, |j| blocked[j] = true);
    }
    Ok(out)
}

fn for_each_in_cube(dims: [usize; 3], c: [usize; 3], r: isize, mut f: impl FnMut(usize)) {
    let range = |a: usize| {
        let lo = (c[a] as isize - r).max(0) as usize;
        let hi = (c[a] as isize + r).min(dims[a] as isize - 1) as usize;
        lo..=hi
    };
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                f(x + dims[0] * (y + dims[1] * z));
            }
        }
    }
}

/// Twelve-channel descriptor volume; channels are contiguous per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVolume {
    dims: [usize; 3],
    data: Vec<f32>,
}

/// MIND-SSC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorParams {
    pub patch_radius: usize,
    pub dilation: usize,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        DescriptorParams {
            patch_radius: 1,
            dilation: 2,
        }
    }
}

impl DescriptorVolume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n * MIND_CHANNELS {
            return invalid(format!("descriptor data length {} != {n} x {MIND_CHANNELS}", data.len()));
        }
        Ok(DescriptorVolume { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, i: usize) -> &[f32] {
        &self.data[i * MIND_CHANNELS..(i + 1) * MIND_CHANNELS]
    }

    /// Trilinear sample of all channels at a continuous coordinate, with edge
    /// replication outside the grid.
    pub fn sample(&self, p: [f64; 3]) -> [f64; MIND_CHANNELS] {
        let s = interp::stencil(self.dims, p);
        let mut out = [0.0; MIND_CHANNELS];
        for k in 0..8 {
            let w = s.w[k];
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.at(s.idx[k])) {
                *o += w * *v as f64;
            }
        }
        out
    }

    /// 2x mean pooling; odd trailing planes are averaged over what exists.
    pub fn downsample2(&self) -> DescriptorVolume {
        let dims = self.dims.map(|d| d.div_ceil(2));
        let mut data = vec![0f32; dims.iter().product::<usize>() * MIND_CHANNELS];
        data.par_chunks_mut(MIND_CHANNELS).enumerate().for_each(|(i, out)| {
            let c = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
            let mut acc = [0f64; MIND_CHANNELS];
            let mut n = 0.0;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let s = [2 * c[0] + dx, 2 * c[1] + dy, 2 * c[2] + dz];
                        if (0..3).all(|a| s[a] < self.dims[a]) {
                            let j = s[0] + self.dims[0] * (s[1] + self.dims[1] * s[2]);
                            for (a, v) in acc.iter_mut().zip(self.at(j)) {
                                *a += *v as f64;
                            }
                            n += 1.0;
                        }
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o = (a / n) as f32;
            }
        });
        DescriptorVolume { dims, data }
    }
}

/// Pairs of six-neighbourhood offsets (unit directions) that lie `sqrt(2)`
/// apart; opposite directions are excluded.
fn ssc_pairs() -> Vec<([i64; 3], [i64; 3])> {
    let six: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    let mut out = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            let d: i64 = (0..3).map(|a| (six[i][a] - six[j][a]).pow(2)).sum();
            if d == 2 {
                out.push((six[i], six[j]));
            }
        }
    }
    out
}

/// MIND-SSC: box-filtered squared differences between shifted copies of the
/// image, normalized by their per-voxel mean and mapped through `exp(-d/s)`.
pub fn mind_descriptor(v: &Volume, params: &DescriptorParams) -> Result<DescriptorVolume> {
    let DescriptorParams { patch_radius, dilation } = *params;
    if patch_radius < 1 || dilation < 1 {
        return invalid("patch_radius and dilation must be at least 1");
    }
    let dims = v.dims();
    let need = 2 * (dilation + patch_radius) + 1;
    if dims.iter().any(|&d| d < need) {
        return invalid(format!("volume {dims:?} too small for descriptor neighbourhood {need}"));
    }
    let grid = Grid::unit(dims);
    let data = v.data();
    let shifted = |i: usize, o: [i64; 3]| -> f64 {
        let c = grid.coords(i);
        let s = [0, 1, 2].map(|a| (c[a] as i64 + o[a] * dilation as i64).clamp(0, dims[a] as i64 - 1) as usize);
        data[s[0] + dims[0] * (s[1] + dims[1] * s[2])] as f64
    };

    let channels: Vec<Vec<f64>> = ssc_pairs()
        .into_par_iter()
        .map(|(a, b)| {
            let mut d: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let diff = shifted(i, a) - shifted(i, b);
                    diff * diff
                })
                .collect();
            filter::box_smooth(&mut d, dims, 2 * patch_radius + 1);
            d
        })
        .collect();
    debug_assert_eq!(channels.len(), MIND_CHANNELS);

    let mut out = vec![0f32; grid.len() * MIND_CHANNELS];
    out.par_chunks_mut(MIND_CHANNELS).enumerate().for_each(|(i, o)| {
        let mean = channels.iter().map(|c| c[i]).sum::<f64>() / MIND_CHANNELS as f64;
        let sigma = mean.max(SIGMA_FLOOR);
        for (k, c) in channels.iter().enumerate() {
            o[k] = (-c[i] / sigma).exp() as f32;
        }
    });
    Ok(DescriptorVolume { dims, data: out })
}

/// Sum of squared channel differences between `a` at `p` and `b` at `q`;
/// fractional or out-of-grid coordinates are sampled trilinearly with edge
/// replication.
pub fn descriptor_ssd(a: &DescriptorVolume, p: [f64; 3], b: &DescriptorVolume, q: [f64; 3]) -> f64 {
    let da = a.sample(p);
    let db = b.sample(q);
    da.iter().zip(&db).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::unit(dims);
        Volume::new(g, (0..g.len()).map(|_| rng.random_range(-500.0..500.0)).collect()).unwrap()
    }

    fn corner_volume(dims: [usize; 3], corner: [usize; 3]) -> Volume {
        Volume::from_fn(Grid::unit(dims), |x, y, z| {
            if x >= corner[0] && y >= corner[1] && z >= corner[2] {
                100.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn constant_volume_has_no_keypoints() {
        let v = Volume::filled(Grid::unit([12; 3]), 42.0);
        let m = TrunkMask::full(*v.grid());
        assert!(foerstner_keypoints(&v, &m, &KeypointParams::default()).unwrap().is_empty());
    }

    #[test]
    fn octant_corner_is_top_keypoint() {
        let corner = [9, 11, 10];
        let v = corner_volume([20, 22, 21], corner);
        let m = TrunkMask::interior(*v.grid(), 3);
        for measure in [CornerMeasure::InverseTrace, CornerMeasure::DetOverTraceSquared] {
            let params = KeypointParams {
                measure,
                ..KeypointParams::default()
            };
            let k = foerstner_keypoints(&v, &m, &params).unwrap();
            let top = k.points[0];
            let d = (0..3).map(|a| (top[a] as f64 - corner[a] as f64 + 0.5).abs()).fold(0.0, f64::max);
            assert!(d <= 2.0, "{measure:?}: {top:?}");
        }
    }

    #[test]
    fn inverse_trace_ignores_weak_isotropic_noise() {
        // A faint noise floor next to a strong corner: the scale-free measure
        // is maximal on isotropic noise, the inverse-trace one is not.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = corner_volume([24; 3], [12; 3]);
        let noisy: Vec<f32> = base.data().iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let v = Volume::new(*base.grid(), noisy).unwrap();
        let m = TrunkMask::interior(*v.grid(), 3);
        let k = foerstner_keypoints(&v, &m, &KeypointParams::default()).unwrap();
        let top = k.points[0];
        assert!((0..3).all(|a| (top[a] as i64 - 12).abs() <= 2), "{top:?}");
    }

    #[test]
    fn keypoints_respect_mask_count_order_and_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 0..100 {
            let v = random_volume([14, 12, 10], t);
            let g = *v.grid();
            let mask = TrunkMask::new(g, (0..g.len()).map(|_| rng.random::<f64>() < 0.7).collect()).unwrap();
            let params = KeypointParams {
                nms_radius: rng.random_range(1..4),
                max_count: rng.random_range(1..60),
                sigma: 1.0,
                ..KeypointParams::default()
            };
            let k = foerstner_keypoints(&v, &mask, &params).unwrap();
            assert!(k.len() <= params.max_count);
            assert!(k.scores.windows(2).all(|w| w[0] >= w[1]));
            for (i, p) in k.points.iter().enumerate() {
                assert!(mask.contains_index(g.index(p[0], p[1], p[2])));
                for q in &k.points[..i] {
                    let cheb = (0..3).map(|a| p[a].abs_diff(q[a])).max().unwrap();
                    assert!(cheb >= params.nms_radius);
                }
            }
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let v = random_volume([8; 3], 3);
        let m = TrunkMask::new(*v.grid(), vec![false; 512]).unwrap();
        assert!(foerstner_keypoints(&v, &m, &KeypointParams::default()).is_err());
    }

    #[test]
    fn ssc_has_twelve_pairs() {
        assert_eq!(ssc_pairs().len(), MIND_CHANNELS);
    }

    #[test]
    fn descriptor_is_bounded_and_affine_invariant() {
        let v = random_volume([14, 13, 12], 4);
        let w = Volume::new(*v.grid(), v.data().iter().map(|x| 3.0 * x + 100.0).collect()).unwrap();
        let p = DescriptorParams::default();
        let (a, b) = (mind_descriptor(&v, &p).unwrap(), mind_descriptor(&w, &p).unwrap());
        assert!(a.data().iter().all(|&x| x > 0.0 && x <= 1.0));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_volume_descriptor_is_flat() {
        let v = Volume::filled(Grid::unit([11; 3]), 5.0);
        let d = mind_descriptor(&v, &DescriptorParams::default()).unwrap();
        assert!(d.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn descriptor_rejects_small_volumes() {
        let v = Volume::filled(Grid::unit([6, 20, 20]), 0.0);
        assert!(mind_descriptor(&v, &DescriptorParams::default()).is_err());
    }

    #[test]
    fn ssd_is_a_pseudometric() {
        let a = mind_descriptor(&random_volume([12; 3], 5), &DescriptorParams::default()).unwrap();
        let b = mind_descriptor(&random_volume([12; 3], 6), &DescriptorParams::default()).unwrap();
        let p = [3.5, 4.25, 6.0];
        let q = [7.0, 2.5, 8.75];
        assert_eq!(descriptor_ssd(&a, p, &a, p), 0.0);
        assert_eq!(descriptor_ssd(&a, p, &b, q), descriptor_ssd(&b, q, &a, p));
        assert!(descriptor_ssd(&a, p, &b, q) > 0.0);
        // out-of-grid points replicate the edge
        assert_eq!(descriptor_ssd(&a, [-3.0, 0.0, 0.0], &a, [0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn downsample_preserves_constant_descriptors() {
        let d = DescriptorVolume::new([5, 4, 3], vec![0.25; 60 * MIND_CHANNELS]).unwrap();
        let h = d.downsample2();
        assert_eq!(h.dims(), [3, 2, 2]);
        assert!(h.data().iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }
}
