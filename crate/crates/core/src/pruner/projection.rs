//! Euclidean projection onto the CSB pattern.
//!
//! Row pruning ranks every in-block row segment of a block-column by its
//! l2 norm and zeroes the smallest `floor(p * count)`; column pruning does
//! the same for in-block column segments of each block-row. Ranking is global
//! within the block-column (block-row), so kernels in different blocks end up
//! with different sizes. Equal norms prune the higher segment index first.

use std::cmp::Ordering;

use crate::csb::{BlockShape, DenseMatrix};
use crate::Scalar;

/// Per-dimension prune fraction `1 - sqrt(1 - pr)`; row and column pruning at
/// this rate compose to an overall kept fraction of `1 - pr`.
pub fn per_dimension_fraction(pr: f64) -> f64 {
    assert!((0.0..1.0).contains(&pr), "prune fraction {pr} outside [0, 1)");
    1.0 - (1.0 - pr).sqrt()
}

/// Segments zeroed out of `count` at fraction `p`: `floor(p * count)`.
pub fn prune_count(p: f64, count: usize) -> usize {
    assert!((0.0..1.0).contains(&p), "per-dimension fraction {p} outside [0, 1)");
    // absorb representation error such as 0.3 * 10 = 2.9999999999999996
    let raw = p * count as f64;
    let k = (raw + raw.abs() * 1e-12).floor() as usize;
    k.min(count)
}

/// Indices of the `k` smallest norms; ties prune the higher index first.
fn select_pruned(norms: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| match norms[a].total_cmp(&norms[b]) {
        Ordering::Equal => b.cmp(&a),
        o => o,
    });
    order.truncate(k);
    order
}

/// Which segments a projection zeroed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionMask {
    pub shape: BlockShape,
    /// Per block-column, one flag per matrix row.
    pub pruned_rows: Vec<Vec<bool>>,
    /// Per block-row, one flag per matrix column.
    pub pruned_cols: Vec<Vec<bool>>,
}

fn row_prune_range<T: Scalar>(w: &mut DenseMatrix<T>, c0: usize, c1: usize, p: f64) -> Vec<bool> {
    let norms: Vec<f64> = (0..w.rows())
        .map(|r| w.row(r)[c0..c1].iter().map(|&v| v * v).sum::<T>().as_f64())
        .collect();
    let mut pruned = vec![false; w.rows()];
    for r in select_pruned(&norms, prune_count(p, norms.len())) {
        pruned[r] = true;
        for c in c0..c1 {
            w.set(r, c, T::zero());
        }
    }
    pruned
}

fn column_prune_range<T: Scalar>(
    w: &mut DenseMatrix<T>,
    r0: usize,
    r1: usize,
    p: f64,
) -> Vec<bool> {
    let norms: Vec<f64> = (0..w.cols())
        .map(|c| (r0..r1).map(|r| w.get(r, c) * w.get(r, c)).sum::<T>().as_f64())
        .collect();
    let mut pruned = vec![false; w.cols()];
    for c in select_pruned(&norms, prune_count(p, norms.len())) {
        pruned[c] = true;
        for r in r0..r1 {
            w.set(r, c, T::zero());
        }
    }
    pruned
}

/// Row pruning of one block-column (all rows, `block_cols` wide).
pub fn row_prune<T: Scalar>(block_column: &DenseMatrix<T>, p: f64) -> DenseMatrix<T> {
    let mut out = block_column.clone();
    row_prune_range(&mut out, 0, block_column.cols(), p);
    out
}

/// Column pruning of one block-row (`block_rows` tall, all columns).
pub fn column_prune<T: Scalar>(block_row: &DenseMatrix<T>, p: f64) -> DenseMatrix<T> {
    let mut out = block_row.clone();
    column_prune_range(&mut out, 0, block_row.rows(), p);
    out
}

/// Projects `w` onto the CSB pattern at overall prune fraction `pr`.
pub fn project_csb<T: Scalar>(w: &DenseMatrix<T>, shape: BlockShape, pr: f64) -> DenseMatrix<T> {
    project_csb_masked(w, shape, pr).0
}

/// [`project_csb`] that also reports which segments were zeroed.
///
/// `w` must be tiled exactly by `shape`.
pub fn project_csb_masked<T: Scalar>(
    w: &DenseMatrix<T>,
    shape: BlockShape,
    pr: f64,
) -> (DenseMatrix<T>, ProjectionMask) {
    assert!(
        shape.divides(w.rows(), w.cols()),
        "{}x{} matrix is not tiled by {}x{} blocks",
        w.rows(),
        w.cols(),
        shape.block_rows,
        shape.block_cols
    );
    let p = per_dimension_fraction(pr);
    let mut z = w.clone();
    let pruned_rows = (0..w.cols() / shape.block_cols)
        .map(|j| row_prune_range(&mut z, j * shape.block_cols, (j + 1) * shape.block_cols, p))
        .collect();
    let pruned_cols = (0..w.rows() / shape.block_rows)
        .map(|i| {
            column_prune_range(&mut z, i * shape.block_rows, (i + 1) * shape.block_rows, p)
        })
        .collect();
    (
        z,
        ProjectionMask {
            shape,
            pruned_rows,
            pruned_cols,
        },
    )
}
