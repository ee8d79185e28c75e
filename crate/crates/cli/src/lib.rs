//! Command-line workflows over the `thoraxreg` toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numerical failure (degenerate input, divergence, failed registration).

pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thoraxreg::field::{jacobian_determinant, DisplacementField};
use thoraxreg::metrics::{evaluate_case, tre, FailureRow, MetricTable};
use thoraxreg::phantom::{make_phantom, CbctConfig, PhantomConfig};
use thoraxreg::ranking::{leaderboard, RankConfig};
use thoraxreg::register::{register_pair, RegistrationConfig, RunReport};
use thoraxreg::volume::{clamp_intensity, crop_pad, crop_pad_labels, resample, resample_labels, write_landmarks};
use thoraxreg::{nifti, Error};

use manifest::{CaseManifest, PhantomRecord, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Method id under which `evaluate --initial` scores the identity field.
pub const INITIAL_METHOD: &str = "Initial";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) | CliError::Data(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "thoraxreg", version, about = "Thoracic CT/CBCT registration: phantoms, registration, evaluation, ranking")]
pub struct Cli {
    /// Worker threads for case-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic phantom cases with known ground truth.
    Phantom(PhantomArgs),
    /// Register the cases listed in manifests and write fields plus reports.
    Register(RegisterArgs),
    /// Score method fields against case annotations.
    Evaluate(EvaluateArgs),
    /// Build a significance-ranked leaderboard from a metric table.
    Rank(RankArgs),
    /// Resample, clamp or crop/pad a NIfTI image, or turn a field into its
    /// Jacobian determinant map.
    Convert(ConvertArgs),
}

fn parse_triple<T: std::str::FromStr + Copy>(s: &str) -> std::result::Result<[T; 3], String> {
    let vals: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse {p:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match vals[..] {
        [v] => Ok([v; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(format!("expected 1 or 3 comma-separated values, got {}", vals.len())),
    }
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_spacing(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_range(s: &str) -> std::result::Result<[f32; 2], String> {
    let v: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|_| format!("cannot parse {p:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [lo, hi] => Ok([lo, hi]),
        _ => Err("expected LO,HI".into()),
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 1)]
    pub n_cases: usize,
    /// Seed of the first case; case i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid size as X,Y,Z or a single value.
    #[arg(long, default_value = "96,96,96", value_parser = parse_dims)]
    pub dims: [usize; 3],
    /// Voxel spacing in mm as X,Y,Z or a single value.
    #[arg(long, default_value = "1.5", value_parser = parse_spacing)]
    pub spacing: [f64; 3],
    /// Largest ground-truth velocity norm in voxels.
    #[arg(long, default_value_t = 5.0)]
    pub magnitude: f64,
    /// Leave the moving image free of CBCT-like degradation.
    #[arg(long)]
    pub no_cbct: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Case manifests (files or case directories).
    #[arg(long = "manifest", required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Registration config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip instance optimization.
    #[arg(long)]
    pub no_instance_opt: bool,
    /// Method directory receiving `<case_id>.nii.gz` and `<case_id>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "manifest", required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Directory with one subdirectory of `<case_id>.nii.gz` fields per method.
    #[arg(long)]
    pub fields: Option<PathBuf>,
    /// Also score the identity field as method "Initial".
    #[arg(long)]
    pub initial: bool,
    /// Also score each case's ground-truth field as method "GroundTruth".
    #[arg(long)]
    pub ground_truth: bool,
    /// Output directory for metrics.json and detail.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Metric table written by `evaluate`.
    #[arg(long)]
    pub table: PathBuf,
    /// Rank config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for leaderboard.csv and leaderboard.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ConvertKind {
    /// Intensity image (trilinear resampling).
    Volume,
    /// Label image (nearest-neighbour resampling).
    Labels,
    /// Displacement field to Jacobian determinant map.
    Jacobian,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output path; `.gz` suffix selects gzip.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = ConvertKind::Volume)]
    pub kind: ConvertKind,
    /// Resample to this spacing in mm.
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<[f64; 3]>,
    /// Clamp intensities to LO,HI (volumes only).
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub clamp: Option<[f32; 2]>,
    /// Centered crop/pad to X,Y,Z after resampling.
    #[arg(long, value_parser = parse_dims)]
    pub crop_pad: Option<[usize; 3]>,
    /// Fill value for padded intensity voxels.
    #[arg(long, default_value_t = -1000.0, allow_hyphen_values = true)]
    pub fill: f32,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", cli.jobs)))?;
    pool.install(|| match cli.command {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Rank(a) => cmd_rank(&a),
        Command::Convert(a) => cmd_convert(&a),
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))
}

pub fn case_dir_name(index: usize) -> String {
    format!("case_{index:03}")
}

pub fn cmd_phantom(a: &PhantomArgs) -> CliResult<()> {
    if a.n_cases == 0 {
        return Err(CliError::Usage("--n-cases must be at least 1".into()));
    }
    if a.out.exists() {
        let non_empty = std::fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .next()
            .is_some();
        if non_empty && !a.force {
            return Err(CliError::Data(format!(
                "output directory {} is not empty; pass --force to write into it",
                a.out.display()
            )));
        }
    }
    create_dir(&a.out)?;
    let cfg = PhantomConfig {
        dims: a.dims,
        spacing: a.spacing,
        deform_magnitude: a.magnitude,
        cbct: if a.no_cbct { None } else { Some(CbctConfig::default()) },
        ..Default::default()
    };
    (0..a.n_cases)
        .into_par_iter()
        .map(|i| write_phantom_case(&a.out.join(case_dir_name(i)), a.seed + i as u64, &cfg))
        .collect::<CliResult<Vec<()>>>()?;
    Ok(())
}

/// Writes one phantom case directory with its manifest.
pub fn write_phantom_case(dir: &Path, seed: u64, cfg: &PhantomConfig) -> CliResult<()> {
    let case = make_phantom(seed, cfg)?;
    create_dir(dir)?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("seed_{seed}"));
    nifti::write_volume(&case.fixed, dir.join("fixed.nii.gz"))?;
    nifti::write_volume(&case.moving, dir.join("moving.nii.gz"))?;
    nifti::write_label_mask(&case.labels_fixed, dir.join("labels_fixed.nii.gz"))?;
    nifti::write_label_mask(&case.labels_moving, dir.join("labels_moving.nii.gz"))?;
    nifti::write_trunk_mask(&case.trunk, dir.join("trunk.nii.gz"))?;
    nifti::write_field(&case.gt_field, dir.join("gt_field.nii.gz"))?;
    write_landmarks(&case.landmarks, dir.join("landmarks_fixed.csv"), dir.join("landmarks_moving.csv"))?;
    let m = CaseManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        case_id: name,
        fixed: "fixed.nii.gz".into(),
        moving: "moving.nii.gz".into(),
        fixed_labels: Some("labels_fixed.nii.gz".into()),
        moving_labels: Some("labels_moving.nii.gz".into()),
        trunk: Some("trunk.nii.gz".into()),
        landmarks_fixed: Some("landmarks_fixed.csv".into()),
        landmarks_moving: Some("landmarks_moving.csv".into()),
        gt_field: Some("gt_field.nii.gz".into()),
        phantom: Some(PhantomRecord {
            seed,
            magnitude_used: case.magnitude_used,
            retries: case.retries,
            config: cfg.clone(),
        }),
        base: PathBuf::new(),
    };
    m.write(dir.join(MANIFEST_FILE))?;
    Ok(())
}

/// Report written next to each registered field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterReport {
    pub case_id: String,
    pub runtime_s: f64,
    pub run: RunReport,
    /// Mean landmark distance before and after registration, when the
    /// manifest lists landmarks.
    pub tre_before_mm: Option<f64>,
    pub tre_after_mm: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn cmd_register(a: &RegisterArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => RegistrationConfig::read(p)?,
        None => RegistrationConfig::default(),
    };
    if a.no_instance_opt {
        cfg.instance_optimization = false;
    }
    let manifests = a
        .manifests
        .iter()
        .map(CaseManifest::load)
        .collect::<thoraxreg::Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    manifests
        .par_iter()
        .map(|m| register_case(m, &cfg, &a.out))
        .collect::<CliResult<Vec<()>>>()?;
    Ok(())
}

fn register_case(m: &CaseManifest, cfg: &RegistrationConfig, out: &Path) -> CliResult<()> {
    let fixed = m.fixed_volume()?;
    let moving = m.moving_volume()?;
    let trunk = m.trunk_mask(&fixed)?;
    let landmarks = m.landmarks()?;
    let (field, run) = register_pair(&fixed, &moving, &trunk, cfg)?;
    let (before, after) = match &landmarks {
        Some(l) if !l.is_empty() => {
            let id = DisplacementField::zeros(field.dims(), field.spacing());
            (
                Some(mean(&tre(l, &id, fixed.spacing())?)),
                Some(mean(&tre(l, &field, fixed.spacing())?)),
            )
        }
        _ => (None, None),
    };
    nifti::write_field(&field, out.join(format!("{}.nii.gz", m.case_id)))?;
    let report = RegisterReport {
        case_id: m.case_id.clone(),
        runtime_s: run.runtime_s,
        run,
        tre_before_mm: before,
        tre_after_mm: after,
    };
    write_text(&out.join(format!("{}.json", m.case_id)), &to_json(&report)?)
}

/// Field file of `case_id` inside a method directory.
fn field_path(dir: &Path, case_id: &str) -> Option<PathBuf> {
    ["nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{case_id}.{ext}")))
        .find(|p| p.is_file())
}

fn read_runtime(dir: &Path, case_id: &str) -> Option<f64> {
    let text = std::fs::read_to_string(dir.join(format!("{case_id}.json"))).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("runtime_s")?.as_f64()
}

/// Method subdirectories in name order.
fn method_dirs(root: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

enum Source {
    Identity,
    GroundTruth,
    Dir(PathBuf),
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let manifests = a
        .manifests
        .iter()
        .map(CaseManifest::load)
        .collect::<thoraxreg::Result<Vec<_>>>()?;
    let mut ids = std::collections::BTreeSet::new();
    for m in &manifests {
        if !ids.insert(m.case_id.clone()) {
            return Err(CliError::Data(format!("case id {} listed twice", m.case_id)));
        }
    }
    let mut methods: Vec<(String, Source)> = Vec::new();
    if a.initial {
        methods.push((INITIAL_METHOD.into(), Source::Identity));
    }
    if a.ground_truth {
        methods.push(("GroundTruth".into(), Source::GroundTruth));
    }
    if let Some(root) = &a.fields {
        for (name, dir) in method_dirs(root)? {
            if methods.iter().any(|(m, _)| *m == name) {
                return Err(CliError::Data(format!("method directory {name} clashes with a built-in method")));
            }
            methods.push((name, Source::Dir(dir)));
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("nothing to evaluate: give --fields, --initial or --ground-truth".into()));
    }

    let per_case: Vec<Vec<std::result::Result<thoraxreg::metrics::CaseMetrics, FailureRow>>> = manifests
        .par_iter()
        .map(|m| -> CliResult<_> {
            let data = m.case_data()?;
            let grid = *data.fixed_labels.grid();
            let mut rows = Vec::new();
            for (method, src) in &methods {
                let fail = |reason: String| FailureRow {
                    method_id: method.clone(),
                    case_id: m.case_id.clone(),
                    reason,
                };
                let (field, runtime) = match src {
                    Source::Identity => (Ok(DisplacementField::zeros(grid.dims, grid.spacing)), None),
                    Source::GroundTruth => match &m.gt_field {
                        Some(p) => (nifti::read_field(m.resolve(p)), None),
                        None => (Err(Error::Config("manifest lists no gt_field".into())), None),
                    },
                    Source::Dir(dir) => match field_path(dir, &m.case_id) {
                        Some(p) => (nifti::read_field(p), read_runtime(dir, &m.case_id)),
                        None => (
                            Err(Error::Config(format!("no field for case {} in {}", m.case_id, dir.display()))),
                            None,
                        ),
                    },
                };
                rows.push(
                    field
                        .and_then(|f| evaluate_case(&m.case_id, method, &data, &f, runtime))
                        .map_err(|e| fail(e.to_string())),
                );
            }
            Ok(rows)
        })
        .collect::<CliResult<Vec<_>>>()?;

    // rows ordered method-major so the table lists methods in a stable order
    let mut table = MetricTable::default();
    for k in 0..methods.len() {
        for case in &per_case {
            match &case[k] {
                Ok(row) => table.push(row.clone())?,
                Err(f) => table.failures.push(f.clone()),
            }
        }
    }
    create_dir(&a.out)?;
    table.write(a.out.join("metrics.json"))?;
    write_text(&a.out.join("detail.csv"), &table.detail_csv())?;
    if !table.failures.is_empty() {
        let list: Vec<String> = table
            .failures
            .iter()
            .map(|f| format!("{}/{}: {}", f.method_id, f.case_id, f.reason))
            .collect();
        return Err(CliError::Data(format!(
            "{} evaluation(s) failed:\n  {}",
            list.len(),
            list.join("\n  ")
        )));
    }
    Ok(())
}

pub fn cmd_rank(a: &RankArgs) -> CliResult<()> {
    let cfg = match &a.config {
        Some(p) => RankConfig::read(p)?,
        None => RankConfig::default(),
    };
    let table = MetricTable::read(&a.table)?;
    let board = leaderboard(&table, &cfg)?;
    create_dir(&a.out)?;
    board.write(a.out.join("leaderboard.csv"), a.out.join("leaderboard.json"))?;
    Ok(())
}

pub fn cmd_convert(a: &ConvertArgs) -> CliResult<()> {
    match a.kind {
        ConvertKind::Volume => {
            let mut v = nifti::read_volume(&a.input)?;
            if let Some(s) = a.spacing {
                v = resample(&v, s)?;
            }
            if let Some([lo, hi]) = a.clamp {
                v = clamp_intensity(&v, lo, hi)?;
            }
            if let Some(d) = a.crop_pad {
                v = crop_pad(&v, d, a.fill)?.image;
            }
            nifti::write_volume(&v, &a.output)?;
        }
        ConvertKind::Labels => {
            if a.clamp.is_some() {
                return Err(CliError::Usage("--clamp applies to intensity volumes only".into()));
            }
            let mut m = nifti::read_label_mask(&a.input)?;
            if let Some(s) = a.spacing {
                m = resample_labels(&m, s)?;
            }
            if let Some(d) = a.crop_pad {
                m = crop_pad_labels(&m, d)?.image;
            }
            nifti::write_label_mask(&m, &a.output)?;
        }
        ConvertKind::Jacobian => {
            if a.spacing.is_some() || a.clamp.is_some() || a.crop_pad.is_some() {
                return Err(CliError::Usage(
                    "--spacing, --clamp and --crop-pad do not apply to --kind jacobian".into(),
                ));
            }
            let f = nifti::read_field(&a.input)?;
            nifti::write_volume(&jacobian_determinant(&f)?.to_volume()?, &a.output)?;
        }
    }
    Ok(())
}
