//! Progressive search for the largest pruning fraction that still meets the
//! loss target.
//!
//! Each round runs one ADMM round at the current fraction and evaluates the
//! projected weights. A pass raises the fraction by the current step; the first
//! failure sets a flag, halves the step and backs off. Once the flag is set,
//! every pass halves the step before raising the fraction. The search stops
//! when the step has shrunk to a quarter of its initial value and the latest
//! evaluation passed. When failures keep backing off towards a fraction that
//! already passed, the search gives up below [`STALL_RATIO`] of the initial
//! step and settles on the last pass.

use serde::Serialize;

use super::{admm_round, eval_loss, train_dense, AdmmState, PruneConfig, PruneError, SyntheticTask};
use crate::csb::{CsbMatrix, DenseMatrix};
use crate::Scalar;

/// Failing rounds stop the search once the step drops below this share of
/// the initial step, provided some round has passed.
pub const STALL_RATIO: f64 = 1.0 / 1024.0;

/// Control state of the search, independent of what is being evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub fraction: f64,
    pub step: f64,
    pub flag: bool,
    init_step: f64,
    max_fraction: f64,
    last_passed: bool,
}

impl SearchState {
    pub fn new(init_fraction: f64, init_step: f64, max_fraction: f64) -> Self {
        Self {
            fraction: init_fraction.clamp(0.0, max_fraction),
            step: init_step,
            flag: false,
            init_step,
            max_fraction,
            last_passed: false,
        }
    }

    /// Applies one evaluation outcome at the current fraction.
    pub fn record(&mut self, passed: bool) {
        self.last_passed = passed;
        if passed {
            if self.flag {
                self.step /= 2.0;
            }
            let next = (self.fraction + self.step).min(self.max_fraction);
            if next == self.fraction {
                // pinned at the clamp or below float resolution
                self.step /= 2.0;
            }
            self.fraction = next;
        } else {
            self.flag = true;
            self.step /= 2.0;
            self.fraction = (self.fraction - self.step).max(0.0);
        }
    }

    pub fn done(&self) -> bool {
        self.last_passed && self.step <= self.init_step / 4.0
    }

    /// Still failing at a step too small to reach a new fraction.
    pub fn stalled(&self) -> bool {
        !self.last_passed && self.step < self.init_step * STALL_RATIO
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub fraction: f64,
    /// Step in effect when this fraction was evaluated.
    pub step: f64,
    pub validation_loss: f64,
    pub passed: bool,
}

/// Runs the search control flow against `eval`, which maps a fraction to its
/// `(validation loss, passed)` outcome.
///
/// Returns the round trace and the index of the final (last passing) round.
pub fn progressive_search<F>(
    cfg: &PruneConfig,
    mut eval: F,
) -> Result<(Vec<RoundRecord>, usize), PruneError>
where
    F: FnMut(f64) -> Result<(f64, bool), PruneError>,
{
    let mut state = SearchState::new(cfg.init_prune_fraction, cfg.init_step, cfg.max_fraction);
    let mut rounds = Vec::new();
    let mut best = None;
    while rounds.len() < cfg.max_rounds {
        let (loss, passed) = eval(state.fraction)?;
        rounds.push(RoundRecord {
            fraction: state.fraction,
            step: state.step,
            validation_loss: loss,
            passed,
        });
        if passed {
            best = Some(rounds.len() - 1);
        }
        state.record(passed);
        if state.done() {
            return Ok((rounds, best.expect("done implies a pass")));
        }
        if let (true, Some(best)) = (state.stalled(), best) {
            return Ok((rounds, best));
        }
    }
    Err(PruneError::NoConvergence(cfg.max_rounds))
}

/// Serializable outcome of a pruning run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneSummary {
    pub final_fraction: f64,
    pub compression_ratio: f64,
    pub baseline_loss: f64,
    pub loss_threshold: f64,
    pub final_loss: f64,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport<T> {
    pub summary: PruneSummary,
    pub z: CsbMatrix<T>,
}

/// Trains the dense baseline, then runs the progressive ADMM search.
pub fn progressive_prune<T: Scalar>(
    task: &SyntheticTask<T>,
    cfg: &PruneConfig,
) -> Result<PruneReport<T>, PruneError> {
    cfg.validate()?;
    if !cfg.block_shape.divides(task.output_dim(), task.input_dim()) {
        return Err(PruneError::Shape(format!(
            "{}x{} weights are not tiled by {}x{} blocks",
            task.output_dim(),
            task.input_dim(),
            cfg.block_shape.block_rows,
            cfg.block_shape.block_cols
        )));
    }
    let dense = train_dense(task, cfg, cfg.baseline_epochs)?;
    let baseline_loss = eval_loss(&dense, task);
    let threshold = cfg.target_loss.threshold(baseline_loss);
    if baseline_loss > threshold {
        return Err(PruneError::InfeasibleTarget {
            baseline: baseline_loss,
            target: threshold,
        });
    }

    let mut state = AdmmState::from_weights(dense);
    let mut best_z: Option<DenseMatrix<T>> = None;
    let (rounds, best) = progressive_search(cfg, |fraction| {
        state = admm_round(&state, task, cfg, fraction)?;
        let loss = eval_loss(&state.z, task);
        let passed = loss <= threshold;
        if passed {
            best_z = Some(state.z.clone());
        }
        Ok((loss, passed))
    })?;
    let z = CsbMatrix::encode(&best_z.expect("search ends on a pass"), cfg.block_shape)?;
    let final_fraction = rounds[best].fraction;
    Ok(PruneReport {
        summary: PruneSummary {
            final_fraction,
            compression_ratio: 1.0 / (1.0 - final_fraction),
            baseline_loss,
            loss_threshold: threshold,
            final_loss: rounds[best].validation_loss,
            rounds,
        },
        z,
    })
}
