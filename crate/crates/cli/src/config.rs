use std::fs;
use std::path::{Path, PathBuf};

use csb_core::pruner::{PruneConfig, TaskConfig};
use csb_core::{EngineConfig, SharingMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Matrices a sweep runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSource {
    /// Synthetic suite with uneven kernel sizes.
    Imbalance,
    /// Random weights projected at `prune_fraction`.
    Pruned,
}

fn default_blocks() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_modes() -> Vec<SharingMode> {
    SharingMode::ALL.to_vec()
}

fn default_seeds() -> usize {
    10
}

fn default_dim() -> usize {
    512
}

fn default_fraction() -> f64 {
    0.75
}

fn default_source() -> SweepSource {
    SweepSource::Imbalance
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_blocks")]
    pub block_sizes: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<SharingMode>,
    /// Matrices per block size.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_dim")]
    pub rows: usize,
    #[serde(default = "default_dim")]
    pub cols: usize,
    #[serde(default = "default_source")]
    pub source: SweepSource,
    /// Only used by the `pruned` source.
    #[serde(default = "default_fraction")]
    pub prune_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            block_sizes: default_blocks(),
            modes: default_modes(),
            seeds: default_seeds(),
            rows: default_dim(),
            cols: default_dim(),
            source: default_source(),
            prune_fraction: default_fraction(),
        }
    }
}

fn default_engine() -> EngineConfig {
    EngineConfig::new(4, 4, 4, 4, SharingMode::TwoD).expect("static engine is valid")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    #[serde(default = "default_engine")]
    pub engine: EngineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Reads and validates `path`; `seed` (flag or `CSB_SEED`) wins over the file.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.engine.validate()?;
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        let s = &self.sweep;
        if s.block_sizes.is_empty() || s.modes.is_empty() || s.seeds == 0 {
            return Err(CliError::Config("sweep needs block sizes, modes and seeds".into()));
        }
        for &b in &s.block_sizes {
            // kernel dims of the imbalance suite come in steps of block / 8
            if b == 0 || b % 8 != 0 || !s.rows.is_multiple_of(b) || !s.cols.is_multiple_of(b) {
                return Err(CliError::Config(format!(
                    "sweep block {b} must be a multiple of 8 dividing {}x{}",
                    s.rows, s.cols
                )));
            }
        }
        if !(0.0..1.0).contains(&s.prune_fraction) {
            return Err(CliError::Config(format!(
                "sweep prune_fraction {} outside [0, 1)",
                s.prune_fraction
            )));
        }
        Ok(())
    }
}
