//! CSB pruning: the projection operator, ADMM re-train/prune rounds and the
//! progressive search for the largest lossless pruning fraction.
//!
//! Pruning amounts are fractions of removed weights in `[0, 1)` internally;
//! reports also expose the equivalent compression ratio `1 / (1 - fraction)`.

mod admm;
mod progressive;
mod projection;
mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csb::{BlockShape, CsbError};

pub use admm::{admm_round, eval_loss, loss_and_gradient, sgd_epoch, train_dense, AdmmState};
pub use progressive::{
    progressive_prune, progressive_search, PruneReport, PruneSummary, RoundRecord, SearchState, STALL_RATIO,
};
pub use projection::{
    column_prune, per_dimension_fraction, project_csb, project_csb_masked, prune_count, row_prune,
    ProjectionMask,
};
pub use task::{SyntheticTask, TaskConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("invalid pruning configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error("dense baseline loss {baseline} does not reach the target {target}")]
    InfeasibleTarget { baseline: f64, target: f64 },

    #[error("progressive search did not settle within {0} rounds")]
    NoConvergence(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Csb(#[from] CsbError),
}

/// Mini-batch SGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 64,
            steps_per_epoch: 8,
        }
    }
}

/// Pass criterion for a pruned model's validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    /// Pass iff loss <= the given value.
    Absolute(f64),
    /// Pass iff loss <= factor x the dense-baseline validation loss.
    BaselineRatio(f64),
}

impl LossTarget {
    pub fn threshold(&self, baseline: f64) -> f64 {
        match *self {
            LossTarget::Absolute(v) => v,
            LossTarget::BaselineRatio(r) => r * baseline,
        }
    }
}

fn default_max_fraction() -> f64 {
    0.99
}

fn default_max_rounds() -> usize {
    64
}

fn default_baseline_epochs() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub block_shape: BlockShape,
    pub init_prune_fraction: f64,
    pub init_step: f64,
    pub target_loss: LossTarget,
    pub epochs_per_round: usize,
    pub rho: f64,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default = "default_max_fraction")]
    pub max_fraction: f64,
    /// SGD epochs used to train the dense baseline before pruning starts.
    #[serde(default = "default_baseline_epochs")]
    pub baseline_epochs: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |msg: String| Err(PruneError::InvalidConfig(msg));
        BlockShape::new(self.block_shape.block_rows, self.block_shape.block_cols)?;
        if !(self.max_fraction > 0.0 && self.max_fraction < 1.0) {
            return bad(format!("max_fraction {} must lie in (0, 1)", self.max_fraction));
        }
        if !(self.init_prune_fraction >= 0.0 && self.init_prune_fraction < self.max_fraction) {
            return bad(format!(
                "init_prune_fraction {} must lie in [0, max_fraction={})",
                self.init_prune_fraction, self.max_fraction
            ));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return bad(format!("init_step {} must be positive", self.init_step));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho {} must be non-negative", self.rho));
        }
        match self.target_loss {
            LossTarget::Absolute(v) if v.is_nan() || v < 0.0 => {
                return bad(format!("absolute target loss {v} must be non-negative"))
            }
            LossTarget::BaselineRatio(r) if r.is_nan() || r < 1.0 => {
                return bad(format!("baseline ratio {r} must be at least 1"))
            }
            _ => {}
        }
        if self.epochs_per_round == 0 || self.max_rounds == 0 {
            return bad("epochs_per_round and max_rounds must be positive".into());
        }
        if self.sgd.batch_size == 0 || self.sgd.steps_per_epoch == 0 {
            return bad("sgd batch_size and steps_per_epoch must be positive".into());
        }
        if !(self.sgd.learning_rate > 0.0 && self.sgd.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.sgd.learning_rate));
        }
        Ok(())
    }
}
