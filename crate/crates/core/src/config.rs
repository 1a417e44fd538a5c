//! Run configuration: one JSON document describing the data source, the
//! split, training and evaluation settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    filter_formula, load_xyz_dir, split, synthetic_dataset, write_xyz_dir, Dataset, Formula,
    Manifest, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{RotationMode, DEFAULT_CUTOFF};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated two-template data.
    Synthetic(SyntheticConfig),
    /// Directory of XYZ files, filtered to one formula.
    XyzDir { path: PathBuf, formula: Formula },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Largest heavy-atom deviation (Å) under which two structures count
    /// as the same conformer.
    pub cutoff: f64,
    pub rotation: RotationMode,
    pub bins: usize,
    pub r_max: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            rotation: RotationMode::AllowImproper,
            bins: 100,
            r_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Checkpoint, metrics, split and manifest go here.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_fraction() -> f64 {
    0.5
}

impl RunConfig {
    /// Parses a run config; relative paths are resolved against the
    /// directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let DataSource::XyzDir { path, .. } = &mut self.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split_fraction must lie in (0, 1)".into()));
        }
        if self.evaluation.bins == 0 || self.evaluation.r_max <= 0.0 || self.evaluation.cutoff < 0.0 {
            return Err(Error::Config("invalid evaluation settings".into()));
        }
        self.train.validate()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    /// Loads or generates the data, splits it, writes both parts as XYZ
    /// directories plus a manifest, and returns `(train, test, manifest)`.
    pub fn prepare_data(&self) -> Result<(Dataset, Dataset, Manifest)> {
        let (dataset, source) = match &self.data {
            DataSource::Synthetic(s) => (synthetic_dataset(s)?, PathBuf::from("synthetic")),
            DataSource::XyzDir { path, formula } => {
                if !path.is_dir() {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("dataset directory {} not found", path.display()),
                    )));
                }
                let (all, _) = load_xyz_dir(path)?;
                (filter_formula(&all, formula)?, path.clone())
            }
        };
        if dataset.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dataset has {} structures of formula {}",
                dataset.len(),
                dataset.formula
            )));
        }
        let (train, test) = split(&dataset, self.split_fraction, self.split_seed)?;
        let train_dir = self.output_dir.join("train");
        let test_dir = self.output_dir.join("test");
        for d in [&train_dir, &test_dir] {
            if d.exists() {
                fs::remove_dir_all(d)?;
            }
        }
        write_xyz_dir(&train_dir, &train.structures, "train")?;
        write_xyz_dir(&test_dir, &test.structures, "test")?;
        let manifest = Manifest {
            source,
            train_dir,
            test_dir,
            formula: dataset.formula.clone(),
            r_min: dataset.r_min.unwrap_or(0.0),
            split_seed: self.split_seed,
            train_size: train.len(),
            test_size: test.len(),
        };
        fs::write(self.manifest_path(), serde_json::to_string_pretty(&manifest)?)?;
        Ok((train, test, manifest))
    }
}
