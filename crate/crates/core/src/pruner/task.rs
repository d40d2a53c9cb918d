use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{project_csb, PruneError};
use crate::csb::{BlockShape, DenseMatrix};
use crate::Scalar;

/// Parameters of the synthetic teacher-student regression task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Teacher output dimension.
    pub rows: usize,
    /// Teacher input dimension.
    pub cols: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub noise_sigma: f64,
    /// When set, the teacher itself is projected onto the CSB pattern at this
    /// fraction using `teacher_block`.
    #[serde(default)]
    pub teacher_prune_fraction: Option<f64>,
    #[serde(default)]
    pub teacher_block: Option<BlockShape>,
}

/// Regression data `y = W_T x + noise` drawn from a seeded generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask<T> {
    pub teacher: DenseMatrix<T>,
    /// One sample per row, `cols` wide.
    pub train_x: DenseMatrix<T>,
    /// One target per row, `rows` wide.
    pub train_y: DenseMatrix<T>,
    pub val_x: DenseMatrix<T>,
    pub val_y: DenseMatrix<T>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl<T: Scalar> SyntheticTask<T> {
    pub fn generate(cfg: &TaskConfig, seed: u64) -> Result<Self, PruneError> {
        if cfg.rows == 0 || cfg.cols == 0 || cfg.train_samples == 0 || cfg.val_samples == 0 {
            return Err(PruneError::InvalidConfig(
                "task dimensions and sample counts must be positive".into(),
            ));
        }
        if cfg.noise_sigma.is_nan() || cfg.noise_sigma < 0.0 {
            return Err(PruneError::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

        let mut teacher = DenseMatrix::from_fn(cfg.rows, cfg.cols, |_, _| T::of(normal()));
        if let Some(fraction) = cfg.teacher_prune_fraction {
            let shape = cfg.teacher_block.ok_or_else(|| {
                PruneError::InvalidConfig("teacher_prune_fraction requires teacher_block".into())
            })?;
            if !(0.0..1.0).contains(&fraction) {
                return Err(PruneError::InvalidConfig(format!(
                    "teacher_prune_fraction {fraction} outside [0, 1)"
                )));
            }
            if !shape.divides(cfg.rows, cfg.cols) {
                return Err(PruneError::Shape(format!(
                    "teacher {}x{} is not tiled by {}x{} blocks",
                    cfg.rows, cfg.cols, shape.block_rows, shape.block_cols
                )));
            }
            teacher = project_csb(&teacher, shape, fraction);
        }

        let mut draw = |n: usize| {
            let x = DenseMatrix::from_fn(n, cfg.cols, |_, _| T::of(normal()));
            let mut y = DenseMatrix::zeros(n, cfg.rows);
            for s in 0..n {
                let clean = teacher.mvm(x.row(s)).expect("teacher width matches samples");
                for (o, v) in clean.into_iter().enumerate() {
                    y.set(s, o, v + T::of(cfg.noise_sigma * normal()));
                }
            }
            (x, y)
        };
        let (train_x, train_y) = draw(cfg.train_samples);
        let (val_x, val_y) = draw(cfg.val_samples);
        Ok(Self {
            teacher,
            train_x,
            train_y,
            val_x,
            val_y,
            noise_sigma: cfg.noise_sigma,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.teacher.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.teacher.rows()
    }
}
