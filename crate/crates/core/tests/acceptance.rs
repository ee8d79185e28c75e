//! Acceptance criteria 1-9. Every criterion prints one PASS/FAIL line to the
//! real stdout (bypassing the harness capture) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use thoraxreg::features::{foerstner_keypoints, mind_descriptor, DescriptorParams, KeypointParams};
use thoraxreg::field::{
    self, bandlimited_to_dense, dense_to_bandlimited, exp_svf, inverse_consistency_error, jacobian_determinant,
    random_smooth_velocity, sdlogj, smooth_velocity, tps_densify, tsc_compose, BandLimitedField, DisplacementField,
    SparseDisplacements, DEFAULT_SQUARING_STEPS,
};
use thoraxreg::metrics::{dice, evaluate_case, hd95, tre, CaseData, CaseMetrics, MetricTable, LARGE_ORGAN_LABELS};
use thoraxreg::nifti;
use thoraxreg::phantom::{make_phantom, CbctConfig, PhantomConfig};
use thoraxreg::ranking::{leaderboard, overall_rank, wilcoxon_exact, wilcoxon_normal, RankConfig};
use thoraxreg::register::{instance_optimize, register_pair, IoObjective, RegistrationConfig};
use thoraxreg::volume::{Grid, LabelMask, LandmarkPair, LandmarkSet, TrunkMask, Volume};

/// Collects failed checks of one criterion.
struct Criterion {
    number: u32,
    title: &'static str,
    start: Instant,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn new(number: u32, title: &'static str) -> Self {
        Criterion {
            number,
            title,
            start: Instant::now(),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn finish(mut self, budget_s: Option<f64>) {
        let elapsed = self.start.elapsed().as_secs_f64();
        if let Some(b) = budget_s {
            self.check(elapsed < b, format!("runtime {elapsed:.1}s exceeds {b}s"));
        }
        let status = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {} [{}]: {status} ({elapsed:.1}s)", self.number, self.title);
        if !self.notes.is_empty() {
            line.push_str(&format!(" {}", self.notes.join("; ")));
        }
        if !self.failures.is_empty() {
            line.push_str(&format!(" -- {}", self.failures.join("; ")));
        }
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn coord(c: [usize; 3]) -> [f64; 3] {
    c.map(|v| v as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criterion 1

fn random_mask(dims: [usize; 3], rng: &mut ChaCha8Rng) -> LabelMask {
    let g = Grid::unit(dims);
    // a union of random boxes keeps the label connected-ish and non-empty
    let mut l = vec![0u16; g.len()];
    for _ in 0..rng.random_range(1..4) {
        let lo = dims.map(|d| rng.random_range(0..d - 1));
        let hi = [0, 1, 2].map(|a| rng.random_range(lo[a] + 1..=dims[a]));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    l[g.index(x, y, z)] = 1;
                }
            }
        }
    }
    // sprinkle noise so boundaries are irregular
    for v in l.iter_mut() {
        if rng.random_bool(0.05) {
            *v = 1 - *v;
        }
    }
    if !l.contains(&1) {
        l[0] = 1;
    }
    LabelMask::new(g, l).unwrap()
}

/// All-pairs surface distance oracle: boundary voxels are label voxels with a
/// face neighbour outside the label or outside the grid.
fn brute_hd95(a: &LabelMask, b: &LabelMask, spacing: [f64; 3]) -> f64 {
    let surface = |m: &LabelMask| -> Vec<[i64; 3]> {
        let g = *m.grid();
        let d = g.dims;
        let l = m.labels();
        let inside = |x: i64, y: i64, z: i64| {
            x >= 0
                && y >= 0
                && z >= 0
                && (x as usize) < d[0]
                && (y as usize) < d[1]
                && (z as usize) < d[2]
                && l[g.index(x as usize, y as usize, z as usize)] == 1
        };
        let mut pts = Vec::new();
        for i in 0..g.len() {
            let c = g.coords(i);
            let (x, y, z) = (c[0] as i64, c[1] as i64, c[2] as i64);
            if !inside(x, y, z) {
                continue;
            }
            let nb = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
            if nb.iter().any(|(dx, dy, dz)| !inside(x + dx, y + dy, z + dz)) {
                pts.push([x, y, z]);
            }
        }
        pts
    };
    let (sa, sb) = (surface(a), surface(b));
    // distance between voxel centres: index offset times spacing per axis
    let nearest = |p: &[i64; 3], set: &[[i64; 3]]| {
        set.iter()
            .map(|q| {
                let d = [0, 1, 2].map(|k| (p[k] - q[k]) as f64 * spacing[k]);
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let mut d: Vec<f64> = sa.iter().map(|p| nearest(p, &sb)).collect();
    d.extend(sb.iter().map(|p| nearest(p, &sa)));
    d.sort_by(|x, y| x.total_cmp(y));
    let h = (d.len() - 1) as f64 * 0.95;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    d[lo] + (h - lo as f64) * (d[hi] - d[lo])
}

#[test]
fn criterion_1_metric_oracles() {
    let mut c = Criterion::new(1, "metric oracles");
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dims = [0, 1, 2].map(|_| rng.random_range(4..=16));
        let spacing = [0, 1, 2].map(|_| rng.random_range(0.5..2.0));
        let a = random_mask(dims, &mut rng);
        let b = random_mask(dims, &mut rng);
        let fast = hd95(&a, &b, 1, spacing).unwrap();
        let slow = brute_hd95(&a, &b, spacing);
        worst = worst.max((fast - slow).abs());
        c.check(fast == slow, format!("HD95 {fast} != oracle {slow} at dims {dims:?}"));
    }
    c.note(format!("HD95 max |diff| {worst:e} over 50 pairs"));

    // two 4^3 cubes shifted by 2 voxels overlap in half their volume
    let g = Grid::unit([10, 6, 6]);
    let cube = |x0: usize| {
        LabelMask::new(
            g,
            (0..g.len())
                .map(|i| {
                    let p = g.coords(i);
                    u16::from((x0..x0 + 4).contains(&p[0]) && (1..5).contains(&p[1]) && (1..5).contains(&p[2]))
                })
                .collect(),
        )
        .unwrap()
    };
    let d = dice(&cube(2), &cube(4)).unwrap()[&1];
    c.check((d - 0.5).abs() < 1e-9, format!("cube-shift Dice {d}"));

    // a landmark two voxels off at 1.5 mm spacing under the identity field
    let lms = LandmarkSet::new(vec![LandmarkPair {
        fixed: [5.0, 5.0, 5.0],
        moving: [7.0, 5.0, 5.0],
    }]);
    let id = DisplacementField::zeros([12; 3], [1.5; 3]);
    let t = tre(&lms, &id, [1.5; 3]).unwrap()[0];
    c.check((t - 3.0).abs() < 1e-9, format!("TRE fixture {t}"));
    c.finish(Some(10.0));
}

// ---------------------------------------------------------------- criterion 2

/// Two-sided p by enumerating all 2^n sign patterns over midranks computed
/// by counting.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let less = d.iter().filter(|w| w.abs() < v.abs()).count() as f64;
            let equal = d.iter().filter(|w| w.abs() == v.abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let dev = (observed - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if (w - total / 2.0).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn criterion_2_wilcoxon_exactness() {
    let mut c = Criterion::new(2, "Wilcoxon exactness");
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for n in 1..=10 {
        for trial in 0..30 {
            // integer-valued samples create ties and zero differences
            let coarse = trial % 2 == 0;
            let draw = |rng: &mut ChaCha8Rng| {
                if coarse {
                    rng.random_range(0..6) as f64
                } else {
                    rng.random_range(-3.0..3.0)
                }
            };
            let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let b: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let p = wilcoxon_exact(&a, &b).unwrap().p;
            let o = enumeration_p(&a, &b);
            worst = worst.max((p - o).abs());
            c.check((p - o).abs() <= 1e-12, format!("n={n}: exact {p} vs enumeration {o}"));
        }
    }
    c.note(format!("exact vs enumeration max |diff| {worst:e}"));
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shift = rng.random_range(-0.8..0.8);
        let a: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..2.0) + shift).collect();
        let b: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..2.0)).collect();
        let e = wilcoxon_exact(&a, &b).unwrap().p;
        let z = wilcoxon_normal(&a, &b).unwrap().p;
        worst = worst.max((e - z).abs());
    }
    c.check(worst < 0.01, format!("n=25 exact vs normal differ by {worst}"));
    c.note(format!("n=25 exact vs normal max |diff| {worst:.4}"));
    c.finish(Some(30.0));
}

// ---------------------------------------------------------------- criterion 3

fn planted_row(method: usize, case: usize, rng: &mut ChaCha8Rng) -> CaseMetrics {
    let k = method as f64;
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(0.0..0.2);
    let dsc: BTreeMap<u16, f64> = [1u16, 2, 3].iter().map(|&l| (l, 0.9 - 0.1 * k + 0.01 * jitter(rng))).collect();
    let hd: BTreeMap<u16, f64> = [1u16, 2, 3].iter().map(|&l| (l, 3.0 + k + jitter(rng))).collect();
    CaseMetrics {
        case_id: format!("case_{case:02}"),
        method_id: format!("M{}", method + 1),
        tre_mm: (0..20).map(|_| 2.0 + k + jitter(rng)).collect(),
        dsc,
        hd95_mm: hd,
        missing_labels: Vec::new(),
        sdlogj: 0.05 + 0.02 * k + 0.001 * jitter(rng),
        runtime_s: Some(10.0 + k),
    }
}

#[test]
fn criterion_3_ranking_fixtures() {
    let mut c = Criterion::new(3, "ranking fixtures");
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // methods in planted order of quality; rows pushed in scrambled order
    let mut rows = Vec::new();
    for m in [2, 0, 3, 1] {
        for case in 0..12 {
            rows.push(planted_row(m, case, &mut rng));
        }
    }
    let table = MetricTable::new(rows).unwrap();
    let cfg = RankConfig::default();
    let board = leaderboard(&table, &cfg).unwrap();
    let order = board.order();
    c.check(order == ["M1", "M2", "M3", "M4"], format!("order {order:?}"));
    let rank = |m: &str| board.rows.iter().find(|r| r.method == m).and_then(|r| r.rank).unwrap();
    c.check(rank("M1") == 1.0, format!("top rank {}", rank("M1")));
    c.check(rank("M4") == 0.1, format!("bottom rank {}", rank("M4")));
    // three opponents: 2 wins -> 0.1 + 0.9 * 2/3 = 0.7 on every metric
    c.check((rank("M2") - 0.7).abs() < 1e-9, format!("M2 rank {}", rank("M2")));
    let hand = (0.4f64 * 0.7 * 1.0).powf(1.0 / 3.0);
    let g = overall_rank(&[0.4, 0.7, 1.0]).unwrap();
    c.check((g - hand).abs() < 1e-9, format!("geometric mean {g} vs {hand}"));
    c.finish(None);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_field_algebra() {
    let mut c = Criterion::new(4, "field algebra");
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let a: [[f64; 3]; 3] = [0, 1, 2].map(|_| [0, 1, 2].map(|_| rng.random_range(-0.3..0.3)));
        let t = [0, 1, 2].map(|_| rng.random_range(-2.0..2.0));
        let f = DisplacementField::from_fn([10, 9, 8], [1.0; 3], |p| {
            let x = coord(p);
            [0, 1, 2].map(|r| a[r][0] * x[0] + a[r][1] * x[1] + a[r][2] * x[2] + t[r])
        })
        .unwrap();
        let m = [0, 1, 2].map(|r| [0, 1, 2].map(|k| a[r][k] + if r == k { 1.0 } else { 0.0 }));
        let closed = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        for d in &jacobian_determinant(&f).unwrap().det {
            worst = worst.max((d - closed).abs());
        }
    }
    c.check(worst < 1e-6, format!("affine Jacobian error {worst}"));

    let s = sdlogj(&DisplacementField::zeros([12; 3], [1.0; 3]), None).unwrap();
    c.check(s == 0.0, format!("SDlogJ(identity) = {s}"));

    let mut ic_worst = 0.0f64;
    for _ in 0..3 {
        let v = random_smooth_velocity([32; 3], [1.0; 3], 4.0, 4.0, &mut rng).unwrap();
        let fwd = exp_svf(&v, DEFAULT_SQUARING_STEPS).unwrap();
        let bwd = exp_svf(&v.neg(), DEFAULT_SQUARING_STEPS).unwrap();
        ic_worst = ic_worst.max(inverse_consistency_error(&fwd, &bwd, None).unwrap());
    }
    c.check(ic_worst < 0.05, format!("exp_svf inverse consistency {ic_worst}"));
    c.note(format!("exp IC {ic_worst:.4}"));

    let patch = DisplacementField::from_fn([6, 5, 4], [1.0; 3], |_| [0, 1, 2].map(|_| 0.0)).unwrap();
    let patch = DisplacementField::new(
        patch.dims(),
        [1.0; 3],
        (0..patch.len()).map(|_| [0, 1, 2].map(|_| rng.random_range(-2.0..2.0))).collect(),
    )
    .unwrap();
    let s = BandLimitedField::from_patch(&patch, [24, 20, 16]).unwrap();
    let dense = bandlimited_to_dense(&s, [24, 20, 16]).unwrap();
    let back = dense_to_bandlimited(&dense, [6, 5, 4]).unwrap();
    let rel = s.relative_difference(&back);
    c.check(rel < 1e-5, format!("band-limited round trip {rel}"));

    let g = Grid::unit([14, 12, 10]);
    let a = [[0.04, -0.02, 0.01], [0.03, 0.05, -0.04], [-0.02, 0.01, 0.06]];
    let map = |p: [f64; 3]| [0, 1, 2].map(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + 0.5 * r as f64);
    let pts: Vec<[f64; 3]> = (0..12).map(|_| [0, 1, 2].map(|k| rng.random_range(0.0..(g.dims[k] - 1) as f64))).collect();
    let sd = SparseDisplacements::new(pts.clone(), pts.iter().map(|p| map(*p)).collect()).unwrap();
    let f = tps_densify(&sd, g, 0.0).unwrap();
    let mut tps_err = 0.0f64;
    for i in 0..g.len() {
        let want = map(coord(g.coords(i)));
        for k in 0..3 {
            tps_err = tps_err.max((f.vectors()[i][k] - want[k]).abs());
        }
    }
    c.check(tps_err < 1e-3, format!("TPS affine error {tps_err}"));
    c.finish(None);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_inverse_consistent_composition() {
    let mut c = Criterion::new(5, "inverse-consistent composition");
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let v = random_smooth_velocity([32; 3], [1.0; 3], 4.0, 2.0, &mut rng).unwrap();
        let w = random_smooth_velocity([32; 3], [1.0; 3], 4.0, 2.0, &mut rng).unwrap();
        let ab = tsc_compose(&v, &w, DEFAULT_SQUARING_STEPS).unwrap();
        let ba = tsc_compose(&v.neg(), &w.neg(), DEFAULT_SQUARING_STEPS).unwrap();
        worst = worst.max(inverse_consistency_error(&ab, &ba, None).unwrap());
    }
    c.check(worst < 0.1, format!("TSC inverse consistency {worst}"));
    c.note(format!("TSC IC {worst:.4}"));

    let mut increases = 0;
    for case in 0..20 {
        let mag = 1.0 + 3.0 * (case as f64) / 19.0;
        let v = random_smooth_velocity([24; 3], [1.0; 3], 3.0, mag, &mut rng).unwrap();
        let ic = |v: &field::VelocityField| {
            let f = exp_svf(v, DEFAULT_SQUARING_STEPS).unwrap();
            let b = exp_svf(&v.neg(), DEFAULT_SQUARING_STEPS).unwrap();
            inverse_consistency_error(&f, &b, None).unwrap()
        };
        let before = ic(&v);
        let after = ic(&smooth_velocity(&v, 3, 2).unwrap());
        if after > before {
            increases += 1;
            c.check(false, format!("case {case}: smoothing raised IC {before} -> {after}"));
        }
    }
    c.note(format!("{increases}/20 smoothing increases"));
    c.finish(None);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_registration_gradient() {
    let mut c = Criterion::new(6, "registration gradient check");
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let dims = [8; 3];
    let vol = |rng: &mut ChaCha8Rng| {
        let g = Grid::unit(dims);
        let mut d: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        thoraxreg::filter::gaussian_smooth(&mut d, dims, 1.0);
        Volume::new(g, d.into_iter().map(|x| (500.0 * x) as f32).collect()).unwrap()
    };
    let fd = mind_descriptor(&vol(&mut rng), &DescriptorParams::default()).unwrap();
    let md = mind_descriptor(&vol(&mut rng), &DescriptorParams::default()).unwrap();
    let obj = IoObjective::new(&fd, &md, None, 0.5).unwrap();
    let u: Vec<[f64; 3]> = (0..512).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.5..1.5))).collect();
    let (_, g) = obj.value_and_grad(&u);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = rng.random_range(0..u.len());
        let a = rng.random_range(0..3);
        let mut up = u.clone();
        up[i][a] += h;
        let mut dn = u.clone();
        dn[i][a] -= h;
        let num = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
        let rel = (num - g[i][a]).abs() / num.abs().max(g[i][a].abs()).max(1e-12);
        worst = worst.max(rel);
    }
    c.check(worst < 1e-3, format!("gradient relative error {worst}"));
    c.note(format!("max rel err {worst:.2e}"));

    // objective trace on a degraded phantom pair at working resolution
    let case = make_phantom(
        6,
        &PhantomConfig {
            dims: [48; 3],
            deform_magnitude: 4.0,
            ..Default::default()
        },
    )
    .unwrap();
    let p = DescriptorParams::default();
    let f = mind_descriptor(&case.fixed, &p).unwrap().downsample2();
    let m = mind_descriptor(&case.moving, &p).unwrap().downsample2();
    let init = DisplacementField::zeros(f.dims(), [3.0; 3]);
    let cfg = RegistrationConfig {
        io_iters: 150,
        ..Default::default()
    };
    let out = instance_optimize(&f, &m, &init, None, &cfg).unwrap();
    let ups = out.trace.windows(2).filter(|w| w[1] > w[0]).count();
    c.check(ups == 0, format!("objective increased {ups} times"));
    c.check(out.trace.last() < out.trace.first(), "objective did not decrease");
    c.note(format!(
        "trace {:.4} -> {:.4}",
        out.trace.first().unwrap(),
        out.trace.last().unwrap()
    ));
    c.finish(None);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_phantom_benchmark() {
    let mut c = Criterion::new(7, "end-to-end phantom benchmark");
    let pcfg = PhantomConfig {
        dims: [96; 3],
        deform_magnitude: 5.0,
        cbct: Some(CbctConfig::default()),
        ..Default::default()
    };
    let rcfg = RegistrationConfig::default();
    let (mut tre0, mut tre1, mut dsc0, mut dsc1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..9u64 {
        let case = make_phantom(1000 + seed, &pcfg).unwrap();
        let data = CaseData {
            fixed_labels: case.labels_fixed.clone(),
            moving_labels: case.labels_moving.clone(),
            landmarks: case.landmarks.clone(),
            trunk: case.trunk.clone(),
        };
        let id = DisplacementField::zeros(case.fixed.dims(), case.fixed.spacing());
        let before = evaluate_case("c", "Initial", &data, &id, None).unwrap();
        let (f, report) = register_pair(&case.fixed, &case.moving, &case.trunk, &rcfg).unwrap();
        let after = evaluate_case("c", "Baseline", &data, &f, Some(report.runtime_s)).unwrap();
        tre0.push(before.mean_tre());
        tre1.push(after.mean_tre());
        dsc0.push(before.mean_dsc(Some(&LARGE_ORGAN_LABELS)));
        dsc1.push(after.mean_dsc(Some(&LARGE_ORGAN_LABELS)));
    }
    let (t0, t1, d0, d1) = (mean(&tre0), mean(&tre1), mean(&dsc0), mean(&dsc1));
    let reduction = 1.0 - t1 / t0;
    c.note(format!(
        "TRE {t0:.2} -> {t1:.2} mm ({:.0}% reduction), large-organ DSC {d0:.3} -> {d1:.3}",
        100.0 * reduction
    ));
    c.check((4.0..=9.0).contains(&t0), format!("initial TRE {t0:.2} mm outside [4, 9]"));
    c.check(reduction >= 0.6, format!("TRE reduction {:.1}% < 60%", 100.0 * reduction));
    c.check(d1 >= 0.8 && d1 > d0, format!("DSC {d0:.3} -> {d1:.3}"));
    c.finish(Some(900.0));
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_descriptor_invariance() {
    let mut c = Criterion::new(8, "descriptor invariance");
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let g = Grid::unit([20, 18, 16]);
    let v = Volume::new(g, (0..g.len()).map(|_| rng.random_range(-300.0..300.0)).collect()).unwrap();
    let w = Volume::new(g, v.data().iter().map(|x| 3.0 * x + 100.0).collect()).unwrap();
    let p = DescriptorParams::default();
    let (a, b) = (mind_descriptor(&v, &p).unwrap(), mind_descriptor(&w, &p).unwrap());
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    c.check(worst < 1e-4, format!("descriptor change {worst}"));
    c.note(format!("max channel diff {worst:.1e}"));

    let params = KeypointParams::default();
    for value in [0.0f32, 100.0, -1000.0] {
        let flat = Volume::filled(Grid::unit([16; 3]), value);
        let k = foerstner_keypoints(&flat, &TrunkMask::full(*flat.grid()), &params).unwrap();
        c.check(k.is_empty(), format!("{} keypoints on constant {value}", k.len()));
    }
    for trial in 0..100 {
        let dims = [0, 1, 2].map(|_| rng.random_range(10..18));
        let g = Grid::unit(dims);
        let v = Volume::new(g, (0..g.len()).map(|_| rng.random_range(-100.0..100.0)).collect()).unwrap();
        let k = foerstner_keypoints(&v, &TrunkMask::full(g), &params).unwrap();
        for i in 0..k.len() {
            for j in i + 1..k.len() {
                let (p, q) = (k.points[i], k.points[j]);
                let cheb = (0..3).map(|a| p[a].abs_diff(q[a])).max().unwrap();
                c.check(
                    cheb >= params.nms_radius,
                    format!("trial {trial}: keypoints {p:?} and {q:?} closer than {}", params.nms_radius),
                );
            }
        }
        c.check(k.scores.windows(2).all(|s| s[0] >= s[1]), format!("trial {trial}: scores not sorted"));
    }
    c.finish(None);
}

// ---------------------------------------------------------------- criterion 9

fn sha(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

fn case_digest(seed: u64, cfg: &PhantomConfig) -> Vec<u8> {
    let c = make_phantom(seed, cfg).unwrap();
    let mut h = Vec::new();
    h.extend(sha(&nifti::encode_volume(&c.fixed)));
    h.extend(sha(&nifti::encode_volume(&c.moving)));
    let gt: Vec<u8> = c.gt_field.vectors().iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    h.extend(sha(&gt));
    let labels: Vec<u8> = c.labels_moving.labels().iter().flat_map(|v| v.to_le_bytes()).collect();
    h.extend(sha(&labels));
    let lms: Vec<u8> = c
        .landmarks
        .pairs
        .iter()
        .flat_map(|p| p.fixed.iter().chain(&p.moving).flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())
        .collect();
    h.extend(sha(&lms));
    h
}

#[test]
fn criterion_9_io_determinism() {
    let mut c = Criterion::new(9, "I/O determinism");
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    // header spacing is float32, so the fixture uses representable values
    let g = Grid::new([7, 6, 5], [0.75, 1.125, 2.5]).unwrap();
    let mut data: Vec<f32> = (0..g.len()).map(|_| rng.random::<f32>() * 4000.0 - 2000.0).collect();
    data[..4].copy_from_slice(&[f32::MIN_POSITIVE / 8.0, -0.0, f32::MAX, f32::MIN]);
    let v = Volume::new(g, data).unwrap();
    for name in ["v.nii", "v.nii.gz"] {
        let path = dir.path().join(name);
        nifti::write_volume(&v, &path).unwrap();
        let back = nifti::read_volume(&path).unwrap();
        let same = back.dims() == v.dims()
            && back.spacing() == v.spacing()
            && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        c.check(same, format!("{name} round trip is not bit-exact"));
    }
    let cfg = PhantomConfig {
        dims: [48; 3],
        deform_magnitude: 4.0,
        ..Default::default()
    };
    let (d1, d2) = (case_digest(77, &cfg), case_digest(77, &cfg));
    c.check(d1 == d2, "phantom checksums differ between runs");
    c.check(d1 != case_digest(78, &cfg), "different seeds gave identical phantoms");
    c.finish(None);
}
