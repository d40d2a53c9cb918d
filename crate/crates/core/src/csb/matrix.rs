use super::{BlockShape, CsbError, DenseMatrix};
use crate::Scalar;

/// Sparse matrix in compressed structured block format.
///
/// Blocks are stored in row-major block order and each kernel is stored in
/// row-major order. The per-block prefix offsets kept here are derived on
/// construction; they are not part of the serialized format.
#[derive(Clone, Debug, PartialEq)]
pub struct CsbMatrix<T> {
    rows: usize,
    cols: usize,
    shape: BlockShape,
    kernel_rows: Vec<u16>,
    kernel_cols: Vec<u16>,
    row_idx: Vec<u16>,
    col_idx: Vec<u16>,
    val: Vec<T>,
    row_off: Vec<usize>,
    col_off: Vec<usize>,
    val_off: Vec<usize>,
}

/// Borrowed view of one block and its kernel.
#[derive(Clone, Copy, Debug)]
pub struct BlockView<'a, T> {
    pub block_row: usize,
    pub block_col: usize,
    pub row_idx: &'a [u16],
    pub col_idx: &'a [u16],
    /// Kernel values, `row_idx.len() x col_idx.len()` in row-major order.
    pub values: &'a [T],
}

impl<T: Copy> BlockView<'_, T> {
    /// Kernel row count `m`.
    #[inline]
    pub fn m(&self) -> usize {
        self.row_idx.len()
    }

    /// Kernel column count `n`.
    #[inline]
    pub fn n(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn kernel(&self, a: usize, b: usize) -> T {
        self.values[a * self.col_idx.len() + b]
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<T: Scalar> CsbMatrix<T> {
    /// Assembles a matrix from the five format arrays, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: usize,
        cols: usize,
        shape: BlockShape,
        kernel_rows: Vec<u16>,
        kernel_cols: Vec<u16>,
        row_idx: Vec<u16>,
        col_idx: Vec<u16>,
        val: Vec<T>,
    ) -> Result<Self, CsbError> {
        if !shape.divides(rows, cols) {
            return Err(CsbError::NotDivisible {
                rows,
                cols,
                block_rows: shape.block_rows,
                block_cols: shape.block_cols,
            });
        }
        let blocks = (rows / shape.block_rows) * (cols / shape.block_cols);
        for (what, arr) in [("kernel_rows", &kernel_rows), ("kernel_cols", &kernel_cols)] {
            if arr.len() != blocks {
                return Err(CsbError::ArrayLength {
                    what,
                    expected: blocks,
                    actual: arr.len(),
                });
            }
        }

        let mut row_off = Vec::with_capacity(blocks + 1);
        let mut col_off = Vec::with_capacity(blocks + 1);
        let mut val_off = Vec::with_capacity(blocks + 1);
        let (mut ro, mut co, mut vo) = (0usize, 0usize, 0usize);
        for b in 0..blocks {
            row_off.push(ro);
            col_off.push(co);
            val_off.push(vo);
            let (m, n) = (kernel_rows[b] as usize, kernel_cols[b] as usize);
            if m > shape.block_rows || n > shape.block_cols {
                return Err(CsbError::InvalidBlock {
                    block: b,
                    reason: format!(
                        "kernel {m}x{n} exceeds block {}x{}",
                        shape.block_rows, shape.block_cols
                    ),
                });
            }
            ro += m;
            co += n;
            vo += m * n;
        }
        row_off.push(ro);
        col_off.push(co);
        val_off.push(vo);

        for (what, expected, actual) in [
            ("row_idx", ro, row_idx.len()),
            ("col_idx", co, col_idx.len()),
            ("val", vo, val.len()),
        ] {
            if expected != actual {
                return Err(CsbError::ArrayLength {
                    what,
                    expected,
                    actual,
                });
            }
        }

        for b in 0..blocks {
            check_indices(&row_idx[row_off[b]..row_off[b + 1]], shape.block_rows)
                .map_err(|reason| CsbError::InvalidBlock {
                    block: b,
                    reason: format!("row indices {reason}"),
                })?;
            check_indices(&col_idx[col_off[b]..col_off[b + 1]], shape.block_cols)
                .map_err(|reason| CsbError::InvalidBlock {
                    block: b,
                    reason: format!("column indices {reason}"),
                })?;
        }

        Ok(Self {
            rows,
            cols,
            shape,
            kernel_rows,
            kernel_cols,
            row_idx,
            col_idx,
            val,
            row_off,
            col_off,
            val_off,
        })
    }

    /// Encodes a dense matrix whose dimensions are multiples of the block shape.
    ///
    /// Per block, a row (column) is kept iff it holds at least one nonzero and
    /// the kernel is the sub-matrix at the kept cross-points.
    pub fn encode(dense: &DenseMatrix<T>, shape: BlockShape) -> Result<Self, CsbError> {
        let (rows, cols) = (dense.rows(), dense.cols());
        if !shape.divides(rows, cols) {
            return Err(CsbError::NotDivisible {
                rows,
                cols,
                block_rows: shape.block_rows,
                block_cols: shape.block_cols,
            });
        }
        let (br, bc) = (shape.block_rows, shape.block_cols);
        let (grid_rows, grid_cols) = (rows / br, cols / bc);
        let blocks = grid_rows * grid_cols;

        let mut kernel_rows = Vec::with_capacity(blocks);
        let mut kernel_cols = Vec::with_capacity(blocks);
        let mut row_idx = Vec::new();
        let mut col_idx = Vec::new();
        let mut val = Vec::new();
        let mut kept_rows = Vec::with_capacity(br);
        let mut kept_cols = Vec::with_capacity(bc);

        for gr in 0..grid_rows {
            for gc in 0..grid_cols {
                let (r0, c0) = (gr * br, gc * bc);
                kept_rows.clear();
                kept_cols.clear();
                kept_rows.extend((0..br).filter(|&r| {
                    dense.row(r0 + r)[c0..c0 + bc].iter().any(|v| !v.is_zero())
                }));
                kept_cols.extend(
                    (0..bc).filter(|&c| (0..br).any(|r| !dense.get(r0 + r, c0 + c).is_zero())),
                );
                kernel_rows.push(kept_rows.len() as u16);
                kernel_cols.push(kept_cols.len() as u16);
                row_idx.extend(kept_rows.iter().map(|&r| r as u16));
                col_idx.extend(kept_cols.iter().map(|&c| c as u16));
                for &r in &kept_rows {
                    for &c in &kept_cols {
                        val.push(dense.get(r0 + r, c0 + c));
                    }
                }
            }
        }
        Self::from_parts(rows, cols, shape, kernel_rows, kernel_cols, row_idx, col_idx, val)
    }

    /// Zero-pads `dense` up to the block grid and encodes it.
    pub fn encode_padded(dense: &DenseMatrix<T>, shape: BlockShape) -> Result<Self, CsbError> {
        Self::encode(&dense.padded_to(shape), shape)
    }

    /// Scatters kernel values back to their cross-points.
    pub fn decode(&self) -> DenseMatrix<T> {
        let mut dense = DenseMatrix::zeros(self.rows, self.cols);
        for blk in self.blocks() {
            let (r0, c0) = (
                blk.block_row * self.shape.block_rows,
                blk.block_col * self.shape.block_cols,
            );
            for (a, &r) in blk.row_idx.iter().enumerate() {
                for (b, &c) in blk.col_idx.iter().enumerate() {
                    dense.set(r0 + r as usize, c0 + c as usize, blk.kernel(a, b));
                }
            }
        }
        dense
    }

    /// Reference CSB-MVM: blocks in row-major order, inputs gathered through
    /// the column indices, partial sums scattered through the row indices.
    pub fn mvm(&self, x: &[T]) -> Result<Vec<T>, CsbError> {
        if x.len() != self.cols {
            return Err(CsbError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        let mut y = vec![T::zero(); self.rows];
        let mut gathered = Vec::with_capacity(self.shape.block_cols);
        for blk in self.blocks() {
            if blk.is_empty() {
                continue;
            }
            let r0 = blk.block_row * self.shape.block_rows;
            let c0 = blk.block_col * self.shape.block_cols;
            gathered.clear();
            gathered.extend(blk.col_idx.iter().map(|&c| x[c0 + c as usize]));
            let n = blk.n();
            for (a, &r) in blk.row_idx.iter().enumerate() {
                let partial = blk.values[a * n..(a + 1) * n]
                    .iter()
                    .zip(&gathered)
                    .fold(T::zero(), |acc, (&w, &xv)| acc + w * xv);
                y[r0 + r as usize] += partial;
            }
        }
        Ok(y)
    }

    /// MVM against a logical (unpadded) operand: `x` is zero-extended to the
    /// padded width and the result truncated to `out_len`.
    pub fn mvm_logical(&self, x: &[T], out_len: usize) -> Result<Vec<T>, CsbError> {
        if x.len() > self.cols {
            return Err(CsbError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        if out_len > self.rows {
            return Err(CsbError::DimensionMismatch {
                expected: self.rows,
                actual: out_len,
            });
        }
        let mut padded = x.to_vec();
        padded.resize(self.cols, T::zero());
        let mut y = self.mvm(&padded)?;
        y.truncate(out_len);
        Ok(y)
    }

    /// Normalized index overhead: index elements per stored value.
    ///
    /// Counts every row and column index plus the two kernel-count entries
    /// per block, each as one unit.
    pub fn nio(&self) -> Result<f64, CsbError> {
        if self.val.is_empty() {
            return Err(CsbError::Empty);
        }
        Ok(self.index_count() as f64 / self.val.len() as f64)
    }

    /// Index elements of the encoding (the NIO numerator).
    pub fn index_count(&self) -> usize {
        self.row_idx.len() + self.col_idx.len() + 2 * self.block_count()
    }

    pub fn cast<U: Scalar>(&self) -> CsbMatrix<U> {
        CsbMatrix {
            rows: self.rows,
            cols: self.cols,
            shape: self.shape,
            kernel_rows: self.kernel_rows.clone(),
            kernel_cols: self.kernel_cols.clone(),
            row_idx: self.row_idx.clone(),
            col_idx: self.col_idx.clone(),
            val: self.val.iter().map(|v| U::of(v.as_f64())).collect(),
            row_off: self.row_off.clone(),
            col_off: self.col_off.clone(),
            val_off: self.val_off.clone(),
        }
    }
}

impl<T> CsbMatrix<T> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn block_shape(&self) -> BlockShape {
        self.shape
    }

    /// Block grid dimensions `(block rows, block columns)`.
    #[inline]
    pub fn grid(&self) -> (usize, usize) {
        (
            self.rows / self.shape.block_rows,
            self.cols / self.shape.block_cols,
        )
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.kernel_rows.len()
    }

    pub fn kernel_rows(&self) -> &[u16] {
        &self.kernel_rows
    }

    pub fn kernel_cols(&self) -> &[u16] {
        &self.kernel_cols
    }

    pub fn row_idx(&self) -> &[u16] {
        &self.row_idx
    }

    pub fn col_idx(&self) -> &[u16] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.val
    }

    /// Stored values (kernel cells).
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Block at grid position `(block_row, block_col)`.
    pub fn block(&self, block_row: usize, block_col: usize) -> BlockView<'_, T> {
        let (_, grid_cols) = self.grid();
        let b = block_row * grid_cols + block_col;
        BlockView {
            block_row,
            block_col,
            row_idx: &self.row_idx[self.row_off[b]..self.row_off[b + 1]],
            col_idx: &self.col_idx[self.col_off[b]..self.col_off[b + 1]],
            values: &self.val[self.val_off[b]..self.val_off[b + 1]],
        }
    }

    /// Blocks in row-major block order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockView<'_, T>> + '_ {
        let (grid_rows, grid_cols) = self.grid();
        (0..grid_rows).flat_map(move |r| (0..grid_cols).map(move |c| self.block(r, c)))
    }

    /// Kernel dims `(m, n)` of the block at `(block_row, block_col)`.
    pub fn kernel_dims(&self, block_row: usize, block_col: usize) -> (usize, usize) {
        let (_, grid_cols) = self.grid();
        let b = block_row * grid_cols + block_col;
        (self.kernel_rows[b] as usize, self.kernel_cols[b] as usize)
    }

    /// Position in `values()` of the first kernel value of a block.
    pub fn value_offset(&self, block_row: usize, block_col: usize) -> usize {
        let (_, grid_cols) = self.grid();
        self.val_off[block_row * grid_cols + block_col]
    }
}

fn check_indices(idx: &[u16], bound: usize) -> Result<(), String> {
    if let Some(&last) = idx.last() {
        if last as usize >= bound {
            return Err(format!("{last} out of range 0..{bound}"));
        }
    }
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err("are not strictly increasing".to_string());
    }
    Ok(())
}
