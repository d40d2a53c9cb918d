use super::{BlockShape, CsbError};
use crate::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self, CsbError> {
        if values.len() != rows * cols {
            return Err(CsbError::ArrayLength {
                what: "dense values",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    /// Builds a matrix from `f64` rows, mostly for tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, CsbError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(CsbError::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            values.extend(row.iter().map(|&v| T::of(v)));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Dense matrix-vector product `self * x`.
    pub fn mvm(&self, x: &[T]) -> Result<Vec<T>, CsbError> {
        if x.len() != self.cols {
            return Err(CsbError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&w, &xv)| acc + w * xv)
            })
            .collect())
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| !v.is_zero()).count()
    }

    pub fn frobenius_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// `self - other`, element-wise. Panics on shape mismatch.
    pub fn sub(&self, other: &Self) -> Self {
        assert!(self.same_shape(other), "shape mismatch in sub");
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    /// `self + other`, element-wise. Panics on shape mismatch.
    pub fn add(&self, other: &Self) -> Self {
        assert!(self.same_shape(other), "shape mismatch in add");
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Zero-pads the matrix up to the next multiple of the block shape.
    pub fn padded_to(&self, shape: BlockShape) -> Self {
        let (rows, cols) = shape.padded_dims(self.rows, self.cols);
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        Self::from_fn(rows, cols, |r, c| {
            if r < self.rows && c < self.cols {
                self.get(r, c)
            } else {
                T::zero()
            }
        })
    }

    /// Leading `rows x cols` sub-matrix; strips padding added by [`Self::padded_to`].
    pub fn truncated(&self, rows: usize, cols: usize) -> Self {
        assert!(rows <= self.rows && cols <= self.cols);
        Self::from_fn(rows, cols, |r, c| self.get(r, c))
    }
}

/// Index elements a CSR encoding of `dense` would need: one column index per
/// nonzero plus `rows + 1` row pointers.
pub fn csr_index_count<T: Scalar>(dense: &DenseMatrix<T>) -> usize {
    dense.count_nonzero() + dense.rows() + 1
}
