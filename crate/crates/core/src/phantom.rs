//! Synthetic thoracic phantom with a known deformation.
//!
//! The scene is analytic: body, lungs with branching vessel trees, heart,
//! airway tree, ribs, vertebrae and a tumour. The fixed image samples the
//! scene on the grid; the moving image samples it at `y + w(y)` where `w` is
//! the inverse of the ground-truth field, so `moving(x + gt(x)) ≈ fixed(x)`
//! without any interpolation of rendered data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{self, DisplacementField, VelocityField};
use crate::filter;
use crate::volume::{Grid, LabelMask, LandmarkPair, LandmarkSet, TrunkMask, Volume};

pub const LABEL_LUNG_LEFT: u16 = 1;
pub const LABEL_LUNG_RIGHT: u16 = 2;
pub const LABEL_HEART: u16 = 3;
pub const LABEL_AIRWAY: u16 = 4;
pub const LABEL_TUMOUR: u16 = 5;
pub const LABEL_RIBS: u16 = 6;
pub const LABEL_VERTEBRAE: u16 = 7;

/// Minimum admissible Jacobian determinant of the ground truth.
pub const MIN_JACOBIAN: f64 = 0.05;

const MAX_RETRIES: usize = 8;
/// Weight of the random component relative to the unit breathing mode.
const NOISE_WEIGHT: f64 = 0.35;

/// HU-like intensities of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Palette {
    pub air: f32,
    pub lung: f32,
    pub soft_tissue: f32,
    pub vessel: f32,
    pub heart: f32,
    pub tumour: f32,
    pub bone: f32,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            air: -1000.0,
            lung: -850.0,
            soft_tissue: 20.0,
            vessel: 40.0,
            heart: 60.0,
            tumour: 80.0,
            bone: 700.0,
        }
    }
}

/// CBCT-like degradation. Every effect is disabled at its zero value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbctConfig {
    /// Standard deviation of additive Gaussian noise (HU).
    pub noise_sigma: f64,
    /// Intensity scale applied before `bias`; 1 disables.
    pub contrast: f64,
    pub bias: f64,
    /// Gaussian blur in voxels.
    pub blur_sigma: f64,
    /// Cylinder radius (along z) as a fraction of half the smaller in-plane
    /// extent; voxels outside become `fill`. 0 disables.
    pub fov_radius: f64,
    pub fill: f32,
    /// Amplitude (HU) and period (voxels) of concentric rings.
    pub ring_amplitude: f64,
    pub ring_period: f64,
    /// Amplitude (HU) and number of radial streaks.
    pub streak_amplitude: f64,
    pub streak_count: usize,
}

impl Default for CbctConfig {
    fn default() -> Self {
        CbctConfig {
            noise_sigma: 25.0,
            contrast: 0.85,
            bias: 30.0,
            blur_sigma: 0.8,
            fov_radius: 0.95,
            fill: -1000.0,
            ring_amplitude: 15.0,
            ring_period: 6.0,
            streak_amplitude: 25.0,
            streak_count: 6,
        }
    }
}

impl CbctConfig {
    /// Configuration with every effect switched off.
    pub fn identity() -> Self {
        CbctConfig {
            noise_sigma: 0.0,
            contrast: 1.0,
            bias: 0.0,
            blur_sigma: 0.0,
            fov_radius: 0.0,
            fill: -1000.0,
            ring_amplitude: 0.0,
            ring_period: 6.0,
            streak_amplitude: 0.0,
            streak_count: 0,
        }
    }
}

/// Phantom generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Largest velocity norm in voxels.
    pub deform_magnitude: f64,
    /// Point-spread blur applied to both renderings, in voxels.
    pub render_blur: f64,
    pub palette: Palette,
    pub cbct: Option<CbctConfig>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [96, 96, 96],
            spacing: [1.5; 3],
            deform_magnitude: 5.0,
            render_blur: 0.6,
            palette: Palette::default(),
            cbct: Some(CbctConfig::default()),
        }
    }
}

/// A generated fixed/moving pair with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub seed: u64,
    pub fixed: Volume,
    pub moving: Volume,
    /// Pull-back field: `moving(x + gt(x)) ≈ fixed(x)`.
    pub gt_field: DisplacementField,
    pub labels_fixed: LabelMask,
    pub labels_moving: LabelMask,
    pub landmarks: LandmarkSet,
    pub trunk: TrunkMask,
    /// Velocity magnitude actually used after retries.
    pub magnitude_used: f64,
    pub retries: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    r: f64,
}

impl Segment {
    fn distance(&self, p: [f64; 3]) -> f64 {
        let ab = sub(self.b, self.a);
        let ap = sub(p, self.a);
        let t = (dot(ap, ab) / dot(ab, ab)).clamp(0.0, 1.0);
        let c = [self.a[0] + t * ab[0], self.a[1] + t * ab[1], self.a[2] + t * ab[2]];
        norm(sub(p, c))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// `sum ((p - c) / r)^2`, below 1 inside the ellipsoid.
fn ellipsoid(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum()
}

/// Approximate signed distance to an ellipsoid surface.
fn ellipsoid_sd(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (ellipsoid(p, c, r).sqrt() - 1.0) * r.iter().cloned().fold(f64::INFINITY, f64::min)
}

const BODY: [f64; 2] = [0.88, 0.62];
const LUNG_C: [[f64; 3]; 2] = [[0.38, 0.02, 0.05], [-0.38, 0.02, 0.05]];
const LUNG_R: [f64; 3] = [0.3, 0.42, 0.75];
const HEART_C: [f64; 3] = [0.1, -0.2, -0.25];
const HEART_R: [f64; 3] = [0.25, 0.2, 0.25];
const TUMOUR_C: [f64; 3] = [-0.42, 0.08, 0.25];
const TUMOUR_R: f64 = 0.07;
const RIB_AXES: [f64; 2] = [0.78, 0.52];
const RIB_R: f64 = 0.035;
const RIB_LEVELS: [f64; 7] = [-0.72, -0.48, -0.24, 0.0, 0.24, 0.48, 0.72];
const VERT_Y: f64 = 0.42;
const VERT_R: [f64; 3] = [0.1, 0.08, 0.075];
const AIRWAY_WALL: f64 = 0.02;
/// Width of the occupancy ramp in voxels.
const RAMP: f64 = 1.5;

/// Seed-dependent geometry in normalized units (half the smallest extent).
struct Scene {
    airway: Vec<Segment>,
    vessels: [Vec<Segment>; 2],
    texture: Vec<([f64; 3], f64)>,
    vert_z: Vec<f64>,
    landmarks: Vec<[f64; 3]>,
    palette: Palette,
    /// One voxel in normalized units.
    edge: f64,
}

fn jitter(rng: &mut ChaCha8Rng, s: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(-s..s))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

/// Recursive binary tree from `start` along `dir`; records interior branch
/// points in `forks`.
#[allow(clippy::too_many_arguments)]
fn grow(
    rng: &mut ChaCha8Rng,
    start: [f64; 3],
    dir: [f64; 3],
    len: f64,
    r: f64,
    depth: usize,
    out: &mut Vec<Segment>,
    forks: &mut Vec<(usize, [f64; 3])>,
    level: usize,
) {
    let end = add(start, scale(dir, len));
    out.push(Segment { a: start, b: end, r });
    if depth == 0 {
        return;
    }
    forks.push((level, end));
    // a perpendicular spread direction
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let perp = normalize(sub(helper, scale(dir, dot(helper, dir))));
    let spin = rng.random_range(0.0..std::f64::consts::PI);
    let other = [
        dir[1] * perp[2] - dir[2] * perp[1],
        dir[2] * perp[0] - dir[0] * perp[2],
        dir[0] * perp[1] - dir[1] * perp[0],
    ];
    let side = add(scale(perp, spin.cos()), scale(other, spin.sin()));
    for sgn in [1.0, -1.0] {
        let angle: f64 = rng.random_range(0.45..0.7);
        let d = normalize(add(scale(dir, angle.cos()), scale(side, sgn * angle.sin())));
        grow(rng, end, d, len * 0.72, r * 0.78, depth - 1, out, forks, level + 1);
    }
}

impl Scene {
    fn new(seed: u64, palette: Palette, unit: f64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7e);
        let mut landmarks = Vec::new();

        // Airway: trachea, main bronchi and two further generations.
        let carina = add([0.0, -0.05, 0.45], jitter(&mut rng, 0.02));
        let mut airway = vec![Segment {
            a: [carina[0], carina[1], 1.3],
            b: carina,
            r: 0.065,
        }];
        landmarks.push(carina);
        for side in [1.0, -1.0] {
            let end = add([side * 0.27, 0.0, 0.3], jitter(&mut rng, 0.03));
            airway.push(Segment { a: carina, b: end, r: 0.048 });
            landmarks.push(end);
            for (dy, dz) in [(-0.1, -0.2), (0.1, 0.12)] {
                let e2 = add([side * 0.4, dy, 0.3 + dz], jitter(&mut rng, 0.03));
                airway.push(Segment { a: end, b: e2, r: 0.036 });
                landmarks.push(e2);
                for (ex, ez) in [(0.08, -0.12), (-0.02, 0.1)] {
                    let e3 = add([side * (0.4 + ex), dy * 1.5, 0.3 + dz + ez], jitter(&mut rng, 0.02));
                    airway.push(Segment { a: e2, b: e3, r: 0.027 });
                }
            }
        }

        // Vessel trees rooted at each hilum.
        let vessels = [0, 1].map(|k| {
            let side = if k == 0 { 1.0 } else { -1.0 };
            let mut segs = Vec::new();
            let mut forks = Vec::new();
            for (root_dz, dir) in [(0.1, [0.6, 0.2, 0.8]), (-0.05, [0.6, -0.1, -0.8]), (0.0, [0.7, 0.6, 0.0])] {
                let root = add([side * 0.2, 0.08, root_dz], jitter(&mut rng, 0.02));
                let d = normalize(add([side * dir[0], dir[1], dir[2]], jitter(&mut rng, 0.15)));
                grow(&mut rng, root, d, 0.2, 0.03, 3, &mut segs, &mut forks, 0);
            }
            let lung = LUNG_C[k];
            forks
                .iter()
                .filter(|(lvl, p)| (1..=2).contains(lvl) && ellipsoid(*p, lung, LUNG_R) < 0.6)
                .take(3)
                .for_each(|(_, p)| landmarks.push(*p));
            segs
        });

        // Rib markers on the posterolateral arc, vertebral body centres.
        for &z in &[RIB_LEVELS[1], RIB_LEVELS[3], RIB_LEVELS[4], RIB_LEVELS[5]] {
            for side in [1.0, -1.0] {
                let t: f64 = 0.55;
                landmarks.push([side * RIB_AXES[0] * t.cos(), RIB_AXES[1] * t.sin(), z]);
            }
        }
        let vert_z: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.22 + rng.random_range(-0.01..0.01)).collect();
        for &z in vert_z.iter().skip(2).step_by(1).take(5) {
            landmarks.push([0.0, VERT_Y, z]);
        }

        let texture = (0..4)
            .map(|_| {
                let k = scale(normalize(jitter(&mut rng, 1.0)), rng.random_range(18.0..30.0));
                (k, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();

        Scene {
            airway,
            vessels,
            texture,
            vert_z,
            landmarks,
            palette,
            edge: unit,
        }
    }

    /// Occupancy for an approximate signed distance `sd` (negative inside),
    /// ramping over `RAMP` voxels so renderings are band-limited.
    fn soft(&self, sd: f64) -> f64 {
        (0.5 - sd / (RAMP * self.edge)).clamp(0.0, 1.0)
    }

    /// Intensity, label and body membership at normalized point `p`.
    /// Structures are composited in order; a label wins where its occupancy
    /// reaches one half.
    fn eval(&self, p: [f64; 3]) -> (f32, u16, bool) {
        let pal = &self.palette;
        let [x, y, z] = p;
        let re_body = ((x / BODY[0]).powi(2) + (y / BODY[1]).powi(2)).sqrt();
        let body = self.soft((re_body - 1.0) * BODY[1]);
        if body == 0.0 {
            return (pal.air, 0, false);
        }
        let tex: f64 = self.texture.iter().map(|(k, ph)| (dot(*k, p) + ph).sin()).sum::<f64>() * 6.0;
        let mut val = pal.air as f64 + body * (pal.soft_tissue as f64 + tex - pal.air as f64);
        let mut label = 0u16;
        let mut put = |occ: f64, v: f64, l: Option<u16>, val: &mut f64| {
            if occ > 0.0 {
                *val += occ * (v - *val);
                if let Some(l) = l.filter(|_| occ >= 0.5) {
                    label = l;
                }
            }
        };

        for (k, lung) in LUNG_C.iter().enumerate() {
            let occ = self.soft(ellipsoid_sd(p, *lung, LUNG_R));
            if occ > 0.0 {
                let vessel = self.vessels[k]
                    .iter()
                    .map(|s| self.soft(s.distance(p) - s.r))
                    .fold(0.0, f64::max);
                let inner = pal.lung as f64 + vessel * (pal.vessel - pal.lung) as f64;
                let l = if k == 0 { LABEL_LUNG_LEFT } else { LABEL_LUNG_RIGHT };
                put(occ, inner, Some(l), &mut val);
            }
        }
        put(
            self.soft(ellipsoid_sd(p, HEART_C, HEART_R)),
            pal.heart as f64 + 0.5 * tex,
            Some(LABEL_HEART),
            &mut val,
        );
        if let Some((d, r)) = self
            .airway
            .iter()
            .map(|s| (s.distance(p), s.r))
            .min_by(|a, b| (a.0 - a.1).total_cmp(&(b.0 - b.1)))
        {
            put(self.soft(d - r - AIRWAY_WALL), pal.soft_tissue as f64, None, &mut val);
            put(self.soft(d - r), pal.air as f64, Some(LABEL_AIRWAY), &mut val);
        }
        put(
            self.soft(norm(sub(p, TUMOUR_C)) - TUMOUR_R),
            pal.tumour as f64,
            Some(LABEL_TUMOUR),
            &mut val,
        );
        let re = ((x / RIB_AXES[0]).powi(2) + (y / RIB_AXES[1]).powi(2)).sqrt();
        let radial = (re - 1.0) * 0.5 * (RIB_AXES[0] + RIB_AXES[1]);
        let gap = 1.0 - self.soft((y + 0.3).max(x.abs() - 0.22));
        let rib = RIB_LEVELS
            .iter()
            .map(|zk| self.soft((radial * radial + (z - zk - 0.12 * y).powi(2)).sqrt() - RIB_R))
            .fold(0.0, f64::max);
        put(rib * gap, pal.bone as f64, Some(LABEL_RIBS), &mut val);
        let vert = self
            .vert_z
            .iter()
            .map(|&zv| self.soft(ellipsoid_sd(p, [0.0, VERT_Y, zv], VERT_R)))
            .fold(0.0, f64::max);
        put(vert, pal.bone as f64, Some(LABEL_VERTEBRAE), &mut val);
        (val as f32, label, body >= 0.5)
    }
}

/// Maps voxel coordinates to normalized scene coordinates.
#[derive(Debug, Clone, Copy)]
struct Frame {
    center: [f64; 3],
    unit: f64,
}

impl Frame {
    fn new(dims: [usize; 3]) -> Frame {
        let min = *dims.iter().min().unwrap() as f64;
        Frame {
            center: dims.map(|d| (d as f64 - 1.0) / 2.0),
            unit: (min - 1.0) / 2.0,
        }
    }

    fn to_scene(&self, c: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (c[a] - self.center[a]) / self.unit)
    }

    fn to_voxel(&self, q: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| q[a] * self.unit + self.center[a])
    }
}

struct Rendering {
    image: Vec<f32>,
    labels: Vec<u16>,
    body: Vec<bool>,
}

/// Samples the scene at `x + offset(x)` for every voxel `x`.
fn render(scene: &Scene, frame: Frame, grid: Grid, offset: Option<&DisplacementField>) -> Rendering {
    let samples: Vec<(f32, u16, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let mut p = [c[0] as f64, c[1] as f64, c[2] as f64];
            if let Some(f) = offset {
                p = add(p, f.vectors()[i]);
            }
            scene.eval(frame.to_scene(p))
        })
        .collect();
    Rendering {
        image: samples.iter().map(|s| s.0).collect(),
        labels: samples.iter().map(|s| s.1).collect(),
        body: samples.iter().map(|s| s.2).collect(),
    }
}

fn blur(data: Vec<f32>, dims: [usize; 3], sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data;
    }
    let mut d: Vec<f64> = data.into_iter().map(f64::from).collect();
    filter::gaussian_smooth(&mut d, dims, sigma);
    d.into_iter().map(|v| v as f32).collect()
}

/// Breathing-like motion: a smooth bump pushing the lower thorax along z with
/// a small anterior component.
fn breathing_velocity(frame: Frame, grid: Grid) -> Result<DisplacementField> {
    DisplacementField::from_fn(grid.dims, grid.spacing, |c| {
        let q = frame.to_scene([c[0] as f64, c[1] as f64, c[2] as f64]);
        let s = (-(q[0] / 1.0).powi(2) - (q[1] / 1.0).powi(2) - ((q[2] + 0.1) / 1.2).powi(2)).exp();
        [0.0, -0.25 * s, s]
    })
}

/// Ground-truth velocity: Gaussian-smoothed noise (sigma =
/// dims/12) plus the breathing mode, scaled so its largest norm is
/// `magnitude`.
fn ground_truth_velocity(seed: u64, frame: Frame, grid: Grid, magnitude: f64) -> Result<VelocityField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1e1d);
    let sigma = *grid.dims.iter().min().unwrap() as f64 / 12.0;
    let noise = field::random_smooth_velocity(grid.dims, grid.spacing, sigma, 1.0, &mut rng)?;
    let breath = breathing_velocity(frame, grid)?;
    let bmax = breath.max_norm();
    let mix: Vec<[f64; 3]> = noise
        .as_field()
        .vectors()
        .iter()
        .zip(breath.vectors())
        .map(|(n, b)| [0, 1, 2].map(|a| NOISE_WEIGHT * n[a] + b[a] / bmax))
        .collect();
    let v = VelocityField::new(grid.dims, grid.spacing, mix)?;
    let m = v.max_norm();
    Ok(v.scaled(if m > 0.0 { magnitude / m } else { 0.0 }))
}

/// Generates one phantom case; fully determined by `seed` and `cfg`.
pub fn make_phantom(seed: u64, cfg: &PhantomConfig) -> Result<PhantomCase> {
    let dims = cfg.dims;
    if dims.iter().any(|&d| d < 48) {
        return invalid(format!("phantom dims must be at least 48 per axis, got {dims:?}"));
    }
    let limit = *dims.iter().min().unwrap() as f64 / 8.0;
    if !(cfg.deform_magnitude >= 0.0 && cfg.deform_magnitude <= limit) {
        return invalid(format!(
            "deform_magnitude {} outside [0, {limit}] for dims {dims:?}",
            cfg.deform_magnitude
        ));
    }
    let grid = Grid::new(dims, cfg.spacing)?;
    let frame = Frame::new(dims);
    let scene = Scene::new(seed, cfg.palette, 1.0 / frame.unit);

    let mut magnitude = cfg.deform_magnitude;
    let mut retries = 0;
    let (gt, inverse) = loop {
        let v = ground_truth_velocity(seed, frame, grid, magnitude)?;
        let gt = field::exp_svf(&v, field::DEFAULT_SQUARING_STEPS)?;
        let inv = field::exp_svf(&v.neg(), field::DEFAULT_SQUARING_STEPS)?;
        let ok = |f: &DisplacementField| -> Result<bool> { Ok(field::jacobian_determinant(f)?.min() > MIN_JACOBIAN) };
        if ok(&gt)? && ok(&inv)? {
            break (gt, inv);
        }
        if retries == MAX_RETRIES {
            return Err(Error::Degenerate(format!(
                "ground truth folds even at magnitude {magnitude:.3} after {retries} retries"
            )));
        }
        retries += 1;
        magnitude *= 0.8;
        log::warn!("phantom seed {seed}: ground truth folds, retrying with magnitude {magnitude:.3}");
    };

    let fixed_r = render(&scene, frame, grid, None);
    let moving_r = render(&scene, frame, grid, Some(&inverse));
    let fixed = Volume::new(grid, blur(fixed_r.image, dims, cfg.render_blur))?;
    let mut moving = Volume::new(grid, blur(moving_r.image, dims, cfg.render_blur))?;
    if let Some(c) = &cfg.cbct {
        moving = degrade_cbct(&moving, c, seed ^ 0xcbc7)?;
    }

    let pairs = scene
        .landmarks
        .iter()
        .map(|q| {
            let p = frame.to_voxel(*q).map(f64::round);
            let u = gt.sample(p);
            LandmarkPair {
                fixed: p,
                moving: add(p, u),
            }
        })
        .filter(|pair| grid.contains(pair.fixed) && grid.contains(pair.moving))
        .collect();
    let landmarks = LandmarkSet::new(pairs);
    landmarks.validate(&grid, &grid)?;

    Ok(PhantomCase {
        seed,
        fixed,
        moving,
        gt_field: gt,
        labels_fixed: LabelMask::new(grid, fixed_r.labels)?,
        labels_moving: LabelMask::new(grid, moving_r.labels)?,
        landmarks,
        trunk: TrunkMask::new(grid, fixed_r.body)?,
        magnitude_used: magnitude,
        retries,
    })
}

/// Applies contrast/bias, blur, rings, streaks, noise and finally the
/// cylindrical field of view, each only when enabled in `cfg`.
pub fn degrade_cbct(v: &Volume, cfg: &CbctConfig, seed: u64) -> Result<Volume> {
    let grid = *v.grid();
    let dims = grid.dims;
    let mut data: Vec<f64> = v.data().iter().map(|&x| cfg.contrast * x as f64 + cfg.bias).collect();
    if cfg.blur_sigma > 0.0 {
        filter::gaussian_smooth(&mut data, dims, cfg.blur_sigma);
    }
    let cx = (dims[0] as f64 - 1.0) / 2.0;
    let cy = (dims[1] as f64 - 1.0) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let streak_angles: Vec<f64> = (0..cfg.streak_count)
        .map(|_| rng.random_range(0.0..std::f64::consts::PI))
        .collect();
    if cfg.ring_amplitude != 0.0 || cfg.streak_amplitude != 0.0 {
        for (i, d) in data.iter_mut().enumerate() {
            let c = grid.coords(i);
            let (dx, dy) = (c[0] as f64 - cx, c[1] as f64 - cy);
            let r = (dx * dx + dy * dy).sqrt();
            if cfg.ring_amplitude != 0.0 && cfg.ring_period > 0.0 {
                *d += cfg.ring_amplitude * (std::f64::consts::TAU * r / cfg.ring_period).sin();
            }
            for &a in &streak_angles {
                // distance from the line through the centre at angle a
                let dist = (dx * a.sin() - dy * a.cos()).abs();
                *d += cfg.streak_amplitude * (-(dist * dist) / 2.0).exp();
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for d in data.iter_mut() {
            *d += n.sample(&mut rng);
        }
    }
    if cfg.fov_radius > 0.0 {
        let radius = cfg.fov_radius * cx.min(cy);
        for (i, d) in data.iter_mut().enumerate() {
            let c = grid.coords(i);
            let (dx, dy) = (c[0] as f64 - cx, c[1] as f64 - cy);
            if dx * dx + dy * dy > radius * radius {
                *d = cfg.fill as f64;
            }
        }
    }
    Volume::new(grid, data.into_iter().map(|x| x as f32).collect())
}
