//! Per-case manifest: which files make up a case.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thoraxreg::metrics::CaseData;
use thoraxreg::nifti;
use thoraxreg::phantom::PhantomConfig;
use thoraxreg::volume::{read_landmarks, LabelMask, LandmarkSet, TrunkMask, Volume};
use thoraxreg::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Generation record written next to phantom cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomRecord {
    pub seed: u64,
    pub magnitude_used: f64,
    pub retries: usize,
    pub config: PhantomConfig,
}

/// File paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub schema_version: u32,
    pub case_id: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunk: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_fixed: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_moving: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_field: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomRecord>,
    /// Directory the relative paths resolve against; set on load.
    #[serde(skip)]
    pub base: PathBuf,
}

fn missing(path: &Path) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"))
}

impl CaseManifest {
    /// Reads a manifest file, or `manifest.toml` inside a directory, and
    /// checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: CaseManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: manifest schema_version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        if m.case_id.is_empty() || m.case_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("{}: invalid case_id {:?}", path.display(), m.case_id)));
        }
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in m.referenced() {
            let full = m.resolve(p);
            if !full.is_file() {
                return Err(missing(&full));
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn referenced(&self) -> Vec<&PathBuf> {
        let mut v = vec![&self.fixed, &self.moving];
        v.extend(
            [
                &self.fixed_labels,
                &self.moving_labels,
                &self.trunk,
                &self.landmarks_fixed,
                &self.landmarks_moving,
                &self.gt_field,
            ]
            .into_iter()
            .flatten(),
        );
        v
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
        p.as_ref()
            .ok_or_else(|| Error::Config(format!("case {} has no {what} entry", self.case_id)))
    }

    pub fn fixed_volume(&self) -> Result<Volume> {
        nifti::read_volume(self.resolve(&self.fixed))
    }

    pub fn moving_volume(&self) -> Result<Volume> {
        nifti::read_volume(self.resolve(&self.moving))
    }

    /// The trunk mask, or the whole fixed grid when none is listed.
    pub fn trunk_mask(&self, fixed: &Volume) -> Result<TrunkMask> {
        match &self.trunk {
            Some(p) => nifti::read_trunk_mask(self.resolve(p)),
            None => Ok(TrunkMask::full(*fixed.grid())),
        }
    }

    pub fn landmarks(&self) -> Result<Option<LandmarkSet>> {
        match (&self.landmarks_fixed, &self.landmarks_moving) {
            (Some(f), Some(m)) => Ok(Some(read_landmarks(self.resolve(f), self.resolve(m))?)),
            (None, None) => Ok(None),
            _ => Err(Error::Config(format!(
                "case {} lists landmarks for only one image",
                self.case_id
            ))),
        }
    }

    /// Everything evaluation needs; labels and landmarks are mandatory here.
    pub fn case_data(&self) -> Result<CaseData> {
        let fixed_labels: LabelMask = nifti::read_label_mask(self.resolve(self.require(&self.fixed_labels, "fixed_labels")?))?;
        let moving_labels = nifti::read_label_mask(self.resolve(self.require(&self.moving_labels, "moving_labels")?))?;
        let landmarks = self
            .landmarks()?
            .ok_or_else(|| Error::Config(format!("case {} has no landmark entries", self.case_id)))?;
        let trunk = match &self.trunk {
            Some(p) => nifti::read_trunk_mask(self.resolve(p))?,
            None => TrunkMask::full(*fixed_labels.grid()),
        };
        Ok(CaseData {
            fixed_labels,
            moving_labels,
            landmarks,
            trunk,
        })
    }
}
