//! Experiment configuration files.

use std::path::{Path, PathBuf};

use matl_core::discriminator::AlignmentConfig;
use matl_core::trainer::{EnvConfig, MethodVariant, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable that shifts every seed of a grid.
pub const SEED_OFFSET_VAR: &str = "MATL_SEED_OFFSET";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub env: EnvConfig,
    pub methods: Vec<MethodVariant>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// When non-empty, every aligned method runs once per weight, as
    /// `<method>_lambda<weight>`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_sweep: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One (method, weight, seed) run of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Directory name of the method's results.
    pub label: String,
    pub variant: MethodVariant,
    pub lambda: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |path: &str, message: String| CliError::Config {
            path: path.to_string(),
            message,
        };
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) || self.experiment.starts_with('.') {
            return Err(invalid("experiment", format!("`{}` is not a usable directory name", self.experiment)));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "need at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed".into()));
        }
        if let Some(l) = self.lambda_sweep.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(invalid("lambda_sweep", format!("weights must be >= 0, got {l}")));
        }
        let core = |section: &str, e: matl_core::Error| CliError::Config {
            path: section.to_string(),
            message: e.to_string(),
        };
        self.alignment.validate().map_err(|e| core("alignment", e))?;
        self.train_config().validate().map_err(|e| core("train", e))?;
        self.env.build(self.train.horizon).map_err(|e| core("env", e))?;
        Ok(())
    }

    /// The training section with the alignment section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alignment: self.alignment.clone(),
            ..self.train.clone()
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn needs_pretraining(&self) -> bool {
        self.methods.iter().any(|m| m.needs_pretrained())
    }

    /// Grid cells in method-major order.
    pub fn cells(&self, seed_offset: u64) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &variant in &self.methods {
            let lambdas: Vec<(String, f64)> = if variant.is_aligned() && !self.lambda_sweep.is_empty() {
                self.lambda_sweep.iter().map(|&l| (format!("{variant}_lambda{l}"), l)).collect()
            } else {
                vec![(variant.name().to_string(), self.alignment.lambda)]
            };
            for (label, lambda) in lambdas {
                for &seed in &self.seeds {
                    cells.push(Cell {
                        label: label.clone(),
                        variant,
                        lambda,
                        seed: seed.wrapping_add(seed_offset),
                    });
                }
            }
        }
        cells
    }
}

/// Seed shift from the environment; 0 when unset.
pub fn seed_offset_from_env() -> Result<u64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_OFFSET_VAR} must be a non-negative integer, got `{v}`"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(CliError::Usage(format!("{SEED_OFFSET_VAR}: {e}"))),
    }
}
