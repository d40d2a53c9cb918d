//! Synthetic matrix suites for the utilization and index-overhead sweeps.
//!
//! The imbalance suite draws kernel rows and columns per block from a
//! heavy-tailed distribution: most blocks keep a third or so of their rows
//! and columns, a few are near full. Every fifth matrix is diagonal-dense
//! instead, with full kernels on the block diagonal and sparser ones
//! elsewhere. Kernel dims are multiples of
//! `align` so that tile quantization does not mask load imbalance.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csb::{BlockShape, CsbMatrix, DenseMatrix};
use crate::pruner::project_csb;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
    /// Kernel dims are rounded to multiples of this.
    pub align: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    HeavyTail,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteMatrix<T> {
    pub id: String,
    pub kind: SuiteKind,
    pub csb: CsbMatrix<T>,
}

/// Nonzero weight magnitude bounded away from zero so kept rows and columns
/// stay kept.
fn weight<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::of(v.signum() * (0.1 + v.abs()))
}

/// Relative kernel edge: power law on `[0.3, 1]` with the mass near the
/// low end.
fn tail(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    0.3 + 0.7 * u.powf(TAIL_EXPONENT)
}

const TAIL_EXPONENT: f64 = 2.0;

/// Kernel extent for a block edge of `block` at relative size `frac`.
fn extent(block: usize, align: usize, frac: f64) -> usize {
    let units = block / align;
    ((frac * units as f64).round() as usize).min(units) * align
}

fn block_with_kernel<T: Scalar>(
    d: &mut DenseMatrix<T>,
    rng: &mut ChaCha8Rng,
    origin: (usize, usize),
    block: usize,
    m: usize,
    n: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let mut rows = sample(rng, block, m).into_vec();
    let mut cols = sample(rng, block, n).into_vec();
    rows.sort_unstable();
    cols.sort_unstable();
    for &r in &rows {
        for &c in &cols {
            let v = weight(rng);
            d.set(origin.0 + r, origin.1 + c, v);
        }
    }
}

/// Matrices with strongly uneven per-block kernel sizes.
pub fn imbalance_suite<T: Scalar>(cfg: &SuiteConfig) -> Vec<SuiteMatrix<T>> {
    assert!(cfg.block > 0 && cfg.align > 0 && cfg.block.is_multiple_of(cfg.align), "bad suite geometry");
    let shape = BlockShape::square(cfg.block).expect("block edge in range");
    assert!(shape.divides(cfg.rows, cfg.cols), "suite dims must be block multiples");
    (0..cfg.count)
        .map(|idx| {
            let seed = cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = if idx % 5 == 4 {
                SuiteKind::Diagonal
            } else {
                SuiteKind::HeavyTail
            };
            let mut d = DenseMatrix::zeros(cfg.rows, cfg.cols);
            let (gr, gc) = (cfg.rows / cfg.block, cfg.cols / cfg.block);
            for br in 0..gr {
                for bc in 0..gc {
                    let (fm, fn_) = match kind {
                        SuiteKind::Diagonal if br * gc / gr == bc => (1.0, 1.0),
                        SuiteKind::Diagonal => (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
                        SuiteKind::HeavyTail => (tail(&mut rng), tail(&mut rng)),
                    };
                    let m = extent(cfg.block, cfg.align, fm);
                    let n = extent(cfg.block, cfg.align, fn_);
                    block_with_kernel(&mut d, &mut rng, (br * cfg.block, bc * cfg.block), cfg.block, m, n);
                }
            }
            SuiteMatrix {
                id: format!("{}-{idx}", match kind {
                    SuiteKind::HeavyTail => "tail",
                    SuiteKind::Diagonal => "diag",
                }),
                kind,
                csb: CsbMatrix::encode(&d, shape).expect("generated matrix is block aligned"),
            }
        })
        .collect()
}

/// Dense Gaussian matrix with per-row scales spread over two orders of
/// magnitude, the input the pruning sweeps start from.
pub fn random_weights<T: Scalar>(rows: usize, cols: usize, seed: u64) -> DenseMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..rows).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    DenseMatrix::from_fn(rows, cols, |r, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::of(v * scales[r])
    })
}

/// `random_weights` projected onto the CSB pattern of `block` at `prune_fraction`.
pub fn pruned_matrix<T: Scalar>(
    rows: usize,
    cols: usize,
    block: usize,
    prune_fraction: f64,
    seed: u64,
) -> CsbMatrix<T> {
    let shape = BlockShape::square(block).expect("block edge in range");
    let w = random_weights::<T>(rows, cols, seed).padded_to(shape);
    CsbMatrix::encode(&project_csb(&w, shape, prune_fraction), shape).expect("projection is block aligned")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SuiteConfig {
        SuiteConfig {
            count: 10,
            rows: 128,
            cols: 128,
            block: 32,
            align: 4,
            seed: 1,
        }
    }

    #[test]
    fn kernels_are_aligned_and_reproducible() {
        let a = imbalance_suite::<f64>(&cfg());
        assert_eq!(a, imbalance_suite::<f64>(&cfg()));
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().filter(|m| m.kind == SuiteKind::Diagonal).count(), 2);
        for m in &a {
            for b in m.csb.blocks() {
                assert_eq!(b.m() % 4, 0);
                assert_eq!(b.n() % 4, 0);
                assert!(b.values.iter().all(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn diagonal_blocks_are_full() {
        let s = imbalance_suite::<f64>(&cfg());
        let d = &s[4];
        for i in 0..4 {
            assert_eq!(d.csb.kernel_dims(i, i), (32, 32));
        }
    }

    #[test]
    fn pruned_matrix_keeps_about_the_target_share() {
        let csb = pruned_matrix::<f64>(64, 64, 16, 0.75, 3);
        let kept = csb.decode().count_nonzero() as f64 / (64.0 * 64.0);
        assert!((kept - 0.25).abs() < 0.05, "kept {kept}");
    }
}
