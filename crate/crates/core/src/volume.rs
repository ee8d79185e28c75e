//! Image data model: scalar volumes, label masks, trunk masks and landmarks,
//! plus the preprocessing operations applied before registration.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interp;

/// Geometry shared by every voxel grid: extent, voxel size in mm and the
/// (informational) world position of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return invalid(format!("grid dims must be positive, got {dims:?}"));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return invalid(format!("spacing must be finite and positive, got {spacing:?}"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return invalid(format!("origin must be finite, got {origin:?}"));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit-spacing grid, mostly for tests and synthetic data.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::new(dims, [1.0; 3]).expect("positive dims")
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// True when the continuous voxel coordinate lies within `[0, n-1]`.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        interp::in_domain(self.dims, p)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return invalid(format!(
                "data length {len} does not match dims {:?} ({} voxels)",
                self.dims,
                self.len()
            ));
        }
        Ok(())
    }
}

/// A 3D scalar image with finite intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.check_len(data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite intensity at voxel {i}"));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        Volume {
            data: vec![value; grid.len()],
            grid,
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Integer segmentation; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: Grid,
    labels: Vec<u16>,
    label_ids: BTreeSet<u16>,
}

impl LabelMask {
    pub fn new(grid: Grid, labels: Vec<u16>) -> Result<Self> {
        grid.check_len(labels.len())?;
        let label_ids = labels.iter().copied().filter(|&l| l != 0).collect();
        Ok(LabelMask {
            grid,
            labels,
            label_ids,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Nonzero labels present in the mask.
    pub fn label_ids(&self) -> &BTreeSet<u16> {
        &self.label_ids
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Binary body-trunk region of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkMask {
    grid: Grid,
    mask: Vec<bool>,
}

impl TrunkMask {
    pub fn new(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        grid.check_len(mask.len())?;
        Ok(TrunkMask { grid, mask })
    }

    /// Mask covering the whole grid.
    pub fn full(grid: Grid) -> Self {
        TrunkMask {
            mask: vec![true; grid.len()],
            grid,
        }
    }

    /// Voxels at least `margin` voxels away from every face.
    pub fn interior(grid: Grid, margin: usize) -> Self {
        let d = grid.dims;
        let mask = (0..grid.len())
            .map(|i| {
                let c = grid.coords(i);
                (0..3).all(|a| c[a] >= margin && c[a] + margin < d[a])
            })
            .collect();
        TrunkMask { grid, mask }
    }

    /// Interprets nonzero voxels of a label image as foreground.
    pub fn from_labels(labels: &LabelMask) -> Self {
        TrunkMask {
            grid: labels.grid,
            mask: labels.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains_index(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn intersect(&self, other: &TrunkMask) -> Result<TrunkMask> {
        if self.grid.dims != other.grid.dims {
            return Err(Error::DimMismatch {
                left: self.grid.dims,
                right: other.grid.dims,
            });
        }
        Ok(TrunkMask {
            grid: self.grid,
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }
}

/// One corresponding landmark pair, each point in voxel coordinates of its
/// own image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    pub fixed: [f64; 3],
    pub moving: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub pairs: Vec<LandmarkPair>,
}

impl LandmarkSet {
    pub fn new(pairs: Vec<LandmarkPair>) -> Self {
        LandmarkSet { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks that every fixed point lies in `fixed` and every moving point in
    /// `moving`.
    pub fn validate(&self, fixed: &Grid, moving: &Grid) -> Result<()> {
        for (index, p) in self.pairs.iter().enumerate() {
            if !fixed.contains(p.fixed) {
                return Err(Error::LandmarkOutOfBounds {
                    index,
                    point: p.fixed,
                    dims: fixed.dims,
                });
            }
            if !moving.contains(p.moving) {
                return Err(Error::LandmarkOutOfBounds {
                    index,
                    point: p.moving,
                    dims: moving.dims,
                });
            }
        }
        Ok(())
    }

    /// Shifts both point sets by voxel offsets (e.g. from [`crop_pad`]).
    pub fn shifted(&self, fixed_offset: [i64; 3], moving_offset: [i64; 3]) -> LandmarkSet {
        let shift = |p: [f64; 3], o: [i64; 3]| {
            [p[0] + o[0] as f64, p[1] + o[1] as f64, p[2] + o[2] as f64]
        };
        LandmarkSet {
            pairs: self
                .pairs
                .iter()
                .map(|p| LandmarkPair {
                    fixed: shift(p.fixed, fixed_offset),
                    moving: shift(p.moving, moving_offset),
                })
                .collect(),
        }
    }
}

/// Reads a landmark CSV: one `x,y,z` triple per line, voxel coordinates.
/// Blank lines and lines starting with `#` are skipped; a trailing fourth
/// column (e.g. a keypoint score) is ignored.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(&text).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_points_csv(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::Malformed(format!(
                "line {}: expected x,y,z but found {line:?}",
                lineno + 1
            )));
        }
        let mut p = [0.0f64; 3];
        for a in 0..3 {
            p[a] = fields[a].parse().map_err(|_| {
                Error::Malformed(format!("line {}: bad coordinate {:?}", lineno + 1, fields[a]))
            })?;
            if !p[a].is_finite() {
                return Err(Error::Malformed(format!("line {}: non-finite coordinate", lineno + 1)));
            }
        }
        points.push(p);
    }
    Ok(points)
}

pub fn write_points_csv(path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in points {
        out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a fixed/moving landmark file pair. Both files must list the same
/// number of points; the i-th lines correspond.
pub fn read_landmarks(fixed: impl AsRef<Path>, moving: impl AsRef<Path>) -> Result<LandmarkSet> {
    let f = read_points_csv(fixed.as_ref())?;
    let m = read_points_csv(moving.as_ref())?;
    if f.len() != m.len() {
        return Err(Error::Malformed(format!(
            "landmark files disagree in length: {} has {}, {} has {}",
            fixed.as_ref().display(),
            f.len(),
            moving.as_ref().display(),
            m.len()
        )));
    }
    Ok(LandmarkSet {
        pairs: f
            .into_iter()
            .zip(m)
            .map(|(fixed, moving)| LandmarkPair { fixed, moving })
            .collect(),
    })
}

pub fn write_landmarks(
    lms: &LandmarkSet,
    fixed: impl AsRef<Path>,
    moving: impl AsRef<Path>,
) -> Result<()> {
    let f: Vec<_> = lms.pairs.iter().map(|p| p.fixed).collect();
    let m: Vec<_> = lms.pairs.iter().map(|p| p.moving).collect();
    write_points_csv(fixed, &f)?;
    write_points_csv(moving, &m)
}

fn resampled_grid(grid: &Grid, new_spacing: [f64; 3]) -> Result<Grid> {
    if new_spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return invalid(format!("new spacing must be positive, got {new_spacing:?}"));
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let n = (grid.dims[a] as f64 * grid.spacing[a] / new_spacing[a]).round();
        dims[a] = (n as usize).max(1);
    }
    Grid::with_origin(dims, new_spacing, grid.origin)
}

/// Source voxel coordinate of output voxel `c` when resampling. Voxel
/// `(0,0,0)` keeps its world position in both grids.
#[inline]
fn source_coord(c: [usize; 3], from: &Grid, to: &Grid) -> [f64; 3] {
    [
        c[0] as f64 * to.spacing[0] / from.spacing[0],
        c[1] as f64 * to.spacing[1] / from.spacing[1],
        c[2] as f64 * to.spacing[2] / from.spacing[2],
    ]
}

/// Trilinear resampling to a new voxel size. Output dims are
/// `round(dims * spacing / new_spacing)`; samples past the last input voxel
/// replicate the edge.
pub fn resample(v: &Volume, new_spacing: [f64; 3]) -> Result<Volume> {
    let to = resampled_grid(&v.grid, new_spacing)?;
    if to.dims == v.grid.dims && to.spacing == v.grid.spacing {
        return Ok(v.clone());
    }
    let data = (0..to.len())
        .map(|i| {
            let p = source_coord(to.coords(i), &v.grid, &to);
            interp::sample_clamped(&v.data, v.grid.dims, p) as f32
        })
        .collect();
    Volume::new(to, data)
}

/// Nearest-neighbour resampling for label images.
pub fn resample_labels(m: &LabelMask, new_spacing: [f64; 3]) -> Result<LabelMask> {
    let to = resampled_grid(&m.grid, new_spacing)?;
    let d = m.grid.dims;
    let labels = (0..to.len())
        .map(|i| {
            let p = source_coord(to.coords(i), &m.grid, &to);
            let c: Vec<usize> = (0..3)
                .map(|a| (p[a].round().max(0.0) as usize).min(d[a] - 1))
                .collect();
            m.labels[m.grid.index(c[0], c[1], c[2])]
        })
        .collect();
    LabelMask::new(to, labels)
}

/// Result of [`crop_pad`]: the new volume and the voxel offset that maps old
/// coordinates to new ones (`new = old + offset`).
#[derive(Debug, Clone, PartialEq)]
pub struct CropPad<T> {
    pub image: T,
    pub offset: [i64; 3],
}

fn crop_pad_data<T: Copy>(
    grid: &Grid,
    data: &[T],
    target: [usize; 3],
    fill: T,
) -> Result<(Grid, Vec<T>, [i64; 3])> {
    if target.iter().any(|&t| t == 0) {
        return invalid(format!("target dims must be positive, got {target:?}"));
    }
    let mut offset = [0i64; 3];
    for a in 0..3 {
        let (old, new) = (grid.dims[a] as i64, target[a] as i64);
        // Centered: crops remove floor(excess/2) in front, pads add floor(extra/2).
        offset[a] = if new >= old {
            (new - old) / 2
        } else {
            -((old - new) / 2)
        };
    }
    let origin = [
        grid.origin[0] - offset[0] as f64 * grid.spacing[0],
        grid.origin[1] - offset[1] as f64 * grid.spacing[1],
        grid.origin[2] - offset[2] as f64 * grid.spacing[2],
    ];
    let out_grid = Grid::with_origin(target, grid.spacing, origin)?;
    let mut out = vec![fill; out_grid.len()];
    for z in 0..target[2] {
        let sz = z as i64 - offset[2];
        if sz < 0 || sz >= grid.dims[2] as i64 {
            continue;
        }
        for y in 0..target[1] {
            let sy = y as i64 - offset[1];
            if sy < 0 || sy >= grid.dims[1] as i64 {
                continue;
            }
            for x in 0..target[0] {
                let sx = x as i64 - offset[0];
                if sx < 0 || sx >= grid.dims[0] as i64 {
                    continue;
                }
                out[out_grid.index(x, y, z)] =
                    data[grid.index(sx as usize, sy as usize, sz as usize)];
            }
        }
    }
    Ok((out_grid, out, offset))
}

/// Centered crop and/or symmetric pad to `target` dims.
pub fn crop_pad(v: &Volume, target: [usize; 3], fill: f32) -> Result<CropPad<Volume>> {
    if !fill.is_finite() {
        return invalid("fill value must be finite");
    }
    let (grid, data, offset) = crop_pad_data(&v.grid, &v.data, target, fill)?;
    Ok(CropPad {
        image: Volume::new(grid, data)?,
        offset,
    })
}

pub fn crop_pad_labels(m: &LabelMask, target: [usize; 3]) -> Result<CropPad<LabelMask>> {
    let (grid, labels, offset) = crop_pad_data(&m.grid, &m.labels, target, 0)?;
    Ok(CropPad {
        image: LabelMask::new(grid, labels)?,
        offset,
    })
}

pub fn crop_pad_trunk(m: &TrunkMask, target: [usize; 3]) -> Result<CropPad<TrunkMask>> {
    let (grid, mask, offset) = crop_pad_data(&m.grid, &m.mask, target, false)?;
    Ok(CropPad {
        image: TrunkMask::new(grid, mask)?,
        offset,
    })
}

/// Clamps every intensity to `[lo, hi]`. Infinite bounds disable that side.
pub fn clamp_intensity(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if lo.is_nan() || hi.is_nan() {
        return invalid("clamp bounds must not be NaN");
    }
    if lo > hi {
        return invalid(format!("clamp lower bound {lo} exceeds upper bound {hi}"));
    }
    Ok(Volume {
        grid: v.grid,
        data: v.data.iter().map(|&x| x.clamp(lo, hi)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(Grid::unit(dims), |x, _, _| x as f32).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Grid::new([0, 2, 2], [1.0; 3]).is_err());
        assert!(Grid::new([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(Volume::new(Grid::unit([2, 2, 2]), vec![0.0; 7]).is_err());
        assert!(Volume::new(Grid::unit([1, 1, 2]), vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn resample_identity_and_constant() {
        let v = Volume::from_fn(Grid::new([5, 6, 7], [1.5; 3]).unwrap(), |x, y, z| {
            (x * 3 + y * 7 + z) as f32
        })
        .unwrap();
        assert_eq!(resample(&v, [1.5; 3]).unwrap(), v);

        let c = Volume::filled(Grid::new([6, 6, 6], [1.0, 2.0, 1.5]).unwrap(), -321.5);
        let r = resample(&c, [0.7, 1.3, 2.9]).unwrap();
        assert!(r.data().iter().all(|&x| x == -321.5));
        assert_eq!(r.dims(), [9, 9, 3]);
    }

    #[test]
    fn resample_ramp_twice_finer_matches_analytic() {
        let v = ramp([10, 4, 4]);
        let r = resample(&v, [0.5, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [20, 4, 4]);
        // Output voxel i sits at input coordinate i / 2; the last one lies
        // half a voxel past the input and is excluded as non-interior.
        for x in 0..19 {
            assert!((r.get(x, 2, 2) - x as f32 * 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn resample_rejects_bad_spacing() {
        assert!(resample(&ramp([3, 3, 3]), [1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn resample_labels_nearest() {
        let m = LabelMask::new(Grid::unit([4, 1, 1]), vec![0, 3, 3, 5]).unwrap();
        let r = resample_labels(&m, [0.5, 1.0, 1.0]).unwrap();
        assert_eq!(r.labels(), &[0, 3, 3, 3, 3, 5, 5, 5]);
    }

    #[test]
    fn crop_pad_identity_fill_and_inverse() {
        let v = Volume::from_fn(Grid::unit([4, 4, 4]), |x, y, z| (x + 4 * y + 16 * z) as f32)
            .unwrap();
        assert_eq!(crop_pad(&v, [4, 4, 4], 0.0).unwrap().image, v);

        let padded = crop_pad(&v, [8, 8, 8], -1000.0).unwrap();
        assert_eq!(padded.offset, [2, 2, 2]);
        assert_eq!(padded.image.get(0, 0, 0), -1000.0);
        assert_eq!(padded.image.get(2, 2, 2), v.get(0, 0, 0));

        let big = Volume::from_fn(Grid::unit([9, 10, 7]), |x, y, z| (x * 100 + y * 10 + z) as f32)
            .unwrap();
        let cropped = crop_pad(&big, [6, 5, 7], 0.0).unwrap();
        let back = crop_pad(&cropped.image, [9, 10, 7], 0.0).unwrap();
        assert_eq!(back.offset.map(|o| -o), cropped.offset);
        for z in 0..7 {
            for y in 0..10 {
                for x in 0..9 {
                    let inside = (1..7).contains(&x) && (2..7).contains(&y);
                    if inside {
                        assert_eq!(back.image.get(x, y, z), big.get(x, y, z));
                    }
                }
            }
        }
    }

    #[test]
    fn crop_pad_offset_moves_landmarks() {
        let lms = LandmarkSet::new(vec![LandmarkPair {
            fixed: [1.0, 1.0, 1.0],
            moving: [2.0, 2.0, 2.0],
        }]);
        let s = lms.shifted([2, 2, 2], [-1, 0, 0]);
        assert_eq!(s.pairs[0].fixed, [3.0; 3]);
        assert_eq!(s.pairs[0].moving, [1.0, 2.0, 2.0]);
    }

    #[test]
    fn clamp_to_positive_hu_window() {
        let v = Volume::new(Grid::unit([3, 1, 1]), vec![-500.0, 100.0, 3000.0]).unwrap();
        let c = clamp_intensity(&v, 0.0, 2048.0).unwrap();
        assert_eq!(c.data(), &[0.0, 100.0, 2048.0]);
        assert_eq!(
            clamp_intensity(&v, f32::NEG_INFINITY, f32::INFINITY).unwrap(),
            v
        );
        assert!(clamp_intensity(&v, 5.0, 4.0).is_err());
    }

    #[test]
    fn landmark_csv_parsing() {
        let pts = parse_points_csv("# header\n1,2,3\n\n4.5, 5.5 ,6.5,0.9\n").unwrap();
        assert_eq!(pts, vec![[1.0, 2.0, 3.0], [4.5, 5.5, 6.5]]);
        assert!(parse_points_csv("1,2\n").is_err());
        assert!(parse_points_csv("1,x,2\n").is_err());
    }

    #[test]
    fn landmark_validation_names_index() {
        let g = Grid::unit([4, 4, 4]);
        let lms = LandmarkSet::new(vec![
            LandmarkPair {
                fixed: [1.0; 3],
                moving: [1.0; 3],
            },
            LandmarkPair {
                fixed: [1.0; 3],
                moving: [5.0, 0.0, 0.0],
            },
        ]);
        match lms.validate(&g, &g) {
            Err(Error::LandmarkOutOfBounds { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_bounded(
            data in proptest::collection::vec(-5000f32..5000f32, 27),
            lo in -2000f32..0f32,
            width in 0f32..3000f32,
        ) {
            let v = Volume::new(Grid::unit([3, 3, 3]), data).unwrap();
            let hi = lo + width;
            let once = clamp_intensity(&v, lo, hi).unwrap();
            let twice = clamp_intensity(&once, lo, hi).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.data().iter().all(|&x| x >= lo && x <= hi));
            // order preserving
            for (a, b) in v.data().iter().zip(v.data().iter().skip(1)) {
                let (ca, cb) = (a.clamp(lo, hi), b.clamp(lo, hi));
                if a <= b { prop_assert!(ca <= cb); }
            }
        }
    }
}
