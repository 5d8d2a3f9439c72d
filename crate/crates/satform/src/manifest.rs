//! `manifest.json`: the dataset descriptor written next to `.satf` scenes.
//!
//! The manifest records how a dataset was generated — task or inline formula,
//! seed, scene geometry — plus the ordered sample file list, so a dataset
//! directory is fully self-describing and regenerable.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Named index task, if the dataset was generated from the registry.
    pub task: Option<String>,
    /// Inline generator formula, if one was supplied instead of a task.
    pub formula: Option<String>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub smoothness: usize,
    pub lo: f64,
    pub hi: f64,
    /// Scene file names relative to the manifest's directory, in sample order.
    pub samples: Vec<String>,
}

#[derive(Debug)]
pub enum ManifestError {
    Missing(std::path::PathBuf),
    Io(io::Error),
    Parse(serde_json::Error),
    Invalid(String),
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestError::Missing(p) => write!(f, "manifest not found at {}", p.display()),
            ManifestError::Io(e) => write!(f, "io error: {e}"),
            ManifestError::Parse(e) => write!(f, "malformed manifest: {e}"),
            ManifestError::Invalid(msg) => write!(f, "invalid manifest: {msg}"),
        }
    }
}

impl std::error::Error for ManifestError {}

impl Manifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.task.is_none() && self.formula.is_none() {
            return Err(ManifestError::Invalid(
                "manifest must name a task or a formula".into(),
            ));
        }
        if self.samples.is_empty() {
            return Err(ManifestError::Invalid("manifest lists no samples".into()));
        }
        Ok(())
    }

    /// Write to `dir/manifest.json` with stable formatting.
    pub fn save(&self, dir: &Path) -> Result<(), ManifestError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(ManifestError::Parse)?;
        fs::write(dir.join(MANIFEST_NAME), text + "\n").map_err(ManifestError::Io)
    }

    /// Load from `dir/manifest.json`.
    pub fn load(dir: &Path) -> Result<Manifest, ManifestError> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Err(ManifestError::Missing(path));
        }
        let text = fs::read_to_string(&path).map_err(ManifestError::Io)?;
        let m: Manifest = serde_json::from_str(&text).map_err(ManifestError::Parse)?;
        m.validate()?;
        Ok(m)
    }
}
