//! Experiment configuration, read from and written to TOML.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use prunelab_core::model::PRESETS;
use prunelab_core::sanity::Check;
use prunelab_core::ticket::{Pipeline, SuiteConfig};
use prunelab_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DataSource;
use crate::error::{LabError, Result};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "PRUNELAB_OUT";

/// A grid entry on the check axis: `none` or one sanity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridCheck(pub Option<Check>);

impl GridCheck {
    pub const NONE: GridCheck = GridCheck(None);

    pub fn name(&self) -> &'static str {
        self.0.map_or("none", |c| c.name())
    }
}

impl fmt::Display for GridCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridCheck {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(GridCheck::NONE);
        }
        Ok(GridCheck(Some(s.parse::<Check>()?)))
    }
}

impl TryFrom<String> for GridCheck {
    type Error = LabError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridCheck> for String {
    fn from(c: GridCheck) -> String {
        c.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_checks")]
    pub checks: Vec<GridCheck>,
    /// Retrain with the ticket seed instead of a derived fresh one.
    #[serde(default)]
    pub reuse_ticket_seed: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub dataset: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    /// Pretraining schedule; the retraining one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<TrainConfig>,
    pub pipelines: Vec<Pipeline>,
}

fn default_checks() -> Vec<GridCheck> {
    vec![GridCheck::NONE]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_workers() -> usize {
    1
}

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub pipeline: Pipeline,
    pub sparsity: f64,
    pub check: GridCheck,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map_or(String::new(), |s| format!(" at byte {}", s.start));
            LabError::Config(format!("{}{at}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(LabError::io(path))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.dataset = cfg.dataset.relative_to(base);
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LabError::Config(m));
        if !PRESETS.contains(&self.preset.as_str()) {
            return fail(format!(
                "unknown preset {:?}, expected one of {PRESETS:?}",
                self.preset
            ));
        }
        if self.pipelines.is_empty()
            || self.sparsities.is_empty()
            || self.seeds.is_empty()
            || self.checks.is_empty()
        {
            return fail("pipelines, sparsities, checks and seeds must be nonempty".into());
        }
        if let Some(p) = self.sparsities.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return fail(format!("sparsity {p} outside (0, 1)"));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        self.train.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        Ok(())
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            sparsities: self.sparsities.clone(),
            seeds: self.seeds.clone(),
            pretrain: self.pretrain.clone().unwrap_or_else(|| self.train.clone()),
            retrain: self.train.clone(),
            reuse_ticket_seed: self.reuse_ticket_seed,
        }
    }

    /// Grid in pipeline, sparsity, check, seed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for pipeline in &self.pipelines {
            for &sparsity in &self.sparsities {
                for &check in &self.checks {
                    for &seed in &self.seeds {
                        cells.push(Cell {
                            index: cells.len(),
                            pipeline: pipeline.clone(),
                            sparsity,
                            check,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }

    /// SHA-256 of the canonical JSON form of everything that affects
    /// results. Output location and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.workers = 1;
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `output_dir`, unless the override (normally the environment
    /// variable) is set.
    pub fn resolve_output_dir(&self, overridden: Option<PathBuf>) -> PathBuf {
        overridden
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| self.output_dir.clone())
    }
}
