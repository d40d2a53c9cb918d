use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{project_csb, PruneConfig, PruneError, SyntheticTask};
use crate::csb::DenseMatrix;
use crate::Scalar;

/// Variables carried between ADMM epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState<T> {
    /// Weights trained by SGD on the augmented loss.
    pub w_star: DenseMatrix<T>,
    /// CSB-patterned copy produced by the projection.
    pub z: DenseMatrix<T>,
    /// Scaled dual variable.
    pub u: DenseMatrix<T>,
    pub epoch: usize,
}

impl<T: Scalar> AdmmState<T> {
    /// ADMM start point: `Z = W*`, `U = 0`.
    pub fn from_weights(w: DenseMatrix<T>) -> Self {
        let u = DenseMatrix::zeros(w.rows(), w.cols());
        Self {
            z: w.clone(),
            w_star: w,
            u,
            epoch: 0,
        }
    }

    fn check_shapes(&self, task: &SyntheticTask<T>) -> Result<(), PruneError> {
        let ok = self.w_star.same_shape(&self.z)
            && self.w_star.same_shape(&self.u)
            && self.w_star.same_shape(&task.teacher);
        if ok {
            Ok(())
        } else {
            Err(PruneError::Shape(format!(
                "state {}x{} does not match teacher {}x{}",
                self.w_star.rows(),
                self.w_star.cols(),
                task.teacher.rows(),
                task.teacher.cols()
            )))
        }
    }
}

/// Mean over samples of `||W x - y||^2`.
fn mse<T: Scalar>(w: &DenseMatrix<T>, xs: &DenseMatrix<T>, ys: &DenseMatrix<T>) -> f64 {
    let total: f64 = (0..xs.rows())
        .map(|s| {
            let pred = w.mvm(xs.row(s)).expect("sample width matches weights");
            pred.iter()
                .zip(ys.row(s))
                .map(|(&p, &y)| (p - y).as_f64().powi(2))
                .sum::<f64>()
        })
        .sum();
    total / xs.rows() as f64
}

/// Validation mean squared error of `z`.
pub fn eval_loss<T: Scalar>(z: &DenseMatrix<T>, task: &SyntheticTask<T>) -> f64 {
    mse(z, &task.val_x, &task.val_y)
}

/// Batch loss and analytic gradient of `f(W) + rho/2 ||W - Z + U||_F^2`
/// with `f(W) = mean_batch ||W x - y||^2`.
///
/// The gradient is `(2/B) sum (W x - y) x^T + rho (W - Z + U)`.
pub fn loss_and_gradient<T: Scalar>(
    w: &DenseMatrix<T>,
    xs: &DenseMatrix<T>,
    ys: &DenseMatrix<T>,
    batch: &[usize],
    z: &DenseMatrix<T>,
    u: &DenseMatrix<T>,
    rho: f64,
) -> (f64, DenseMatrix<T>) {
    let (rows, cols) = (w.rows(), w.cols());
    let mut grad = DenseMatrix::zeros(rows, cols);
    let scale = T::of(2.0 / batch.len() as f64);
    let mut loss = 0.0;
    for &s in batch {
        let x = xs.row(s);
        let pred = w.mvm(x).expect("sample width matches weights");
        for (r, (&p, &y)) in pred.iter().zip(ys.row(s)).enumerate() {
            let resid = p - y;
            loss += resid.as_f64().powi(2);
            let g = scale * resid;
            let grow = &mut grad.values_mut()[r * cols..(r + 1) * cols];
            for (gv, &xv) in grow.iter_mut().zip(x) {
                *gv += g * xv;
            }
        }
    }
    loss /= batch.len() as f64;
    if rho != 0.0 {
        let rho_t = T::of(rho);
        let mut penalty = 0.0;
        for (((gv, &wv), &zv), &uv) in grad
            .values_mut()
            .iter_mut()
            .zip(w.values())
            .zip(z.values())
            .zip(u.values())
        {
            let d = wv - zv + uv;
            penalty += d.as_f64().powi(2);
            *gv += rho_t * d;
        }
        loss += 0.5 * rho * penalty;
    }
    (loss, grad)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One SGD epoch on the first ADMM subproblem; `z` and `u` are left untouched.
pub fn sgd_epoch<T: Scalar>(
    state: &AdmmState<T>,
    task: &SyntheticTask<T>,
    cfg: &PruneConfig,
) -> Result<AdmmState<T>, PruneError> {
    state.check_shapes(task)?;
    let n = task.train_x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(task.seed, state.epoch));
    let batch_size = cfg.sgd.batch_size.min(n);
    let lr = T::of(cfg.sgd.learning_rate);

    let mut w = state.w_star.clone();
    let mut batch = Vec::with_capacity(batch_size);
    let mut cursor = 0;
    for step in 0..cfg.sgd.steps_per_epoch {
        batch.clear();
        for _ in 0..batch_size {
            batch.push(order[cursor % n]);
            cursor += 1;
        }
        let (loss, grad) =
            loss_and_gradient(&w, &task.train_x, &task.train_y, &batch, &state.z, &state.u, cfg.rho);
        if !loss.is_finite() || grad.values().iter().any(|g| !g.is_finite()) {
            return Err(PruneError::Diverged {
                epoch: state.epoch,
                step,
            });
        }
        for (wv, &gv) in w.values_mut().iter_mut().zip(grad.values()) {
            *wv -= lr * gv;
        }
    }
    Ok(AdmmState {
        w_star: w,
        z: state.z.clone(),
        u: state.u.clone(),
        epoch: state.epoch,
    })
}

/// `epochs_per_round` iterations of SGD, projection at fraction `pr` and the
/// dual update `U += W* - Z`.
pub fn admm_round<T: Scalar>(
    state: &AdmmState<T>,
    task: &SyntheticTask<T>,
    cfg: &PruneConfig,
    pr: f64,
) -> Result<AdmmState<T>, PruneError> {
    if !(0.0..1.0).contains(&pr) {
        return Err(PruneError::InvalidConfig(format!("prune fraction {pr} outside [0, 1)")));
    }
    let mut st = state.clone();
    for _ in 0..cfg.epochs_per_round {
        st = sgd_epoch(&st, task, cfg)?;
        st.z = project_csb(&st.w_star.add(&st.u), cfg.block_shape, pr);
        st.u = st.u.add(&st.w_star.sub(&st.z));
        st.epoch += 1;
    }
    Ok(st)
}

/// Plain SGD (no penalty) from zero weights; the dense baseline.
pub fn train_dense<T: Scalar>(
    task: &SyntheticTask<T>,
    cfg: &PruneConfig,
    epochs: usize,
) -> Result<DenseMatrix<T>, PruneError> {
    let zeros = DenseMatrix::zeros(task.output_dim(), task.input_dim());
    let mut st = AdmmState::from_weights(zeros);
    let plain = PruneConfig {
        rho: 0.0,
        ..cfg.clone()
    };
    for _ in 0..epochs {
        st = sgd_epoch(&st, task, &plain)?;
        st.epoch += 1;
    }
    Ok(st.w_star)
}
