//! Dense and compressed structured block (CSB) matrices.
//!
//! A CSB matrix is cut into equally sized blocks. Inside every block a subset
//! of rows and a subset of columns survive pruning, and the surviving values
//! sit at their cross-points, forming a small dense *kernel*. The format keeps
//! five arrays: per-block kernel row and column counts, the concatenated
//! in-block row and column indices, and the concatenated kernel values.

mod dense;
mod format;
mod matrix;

use thiserror::Error;

pub use dense::{csr_index_count, DenseMatrix};
pub use format::{deserialize, read_file, serialize, write_file, FormatError, MAGIC};
pub use matrix::{BlockView, CsbMatrix};

/// Block dimensions of a CSB matrix: `block_rows` x `block_cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BlockShape {
    pub block_rows: usize,
    pub block_cols: usize,
}

impl BlockShape {
    /// Largest block edge; kernel counts and indices are stored as `u16`.
    pub const MAX_EDGE: usize = u16::MAX as usize;

    pub fn new(block_rows: usize, block_cols: usize) -> Result<Self, CsbError> {
        if block_rows == 0
            || block_cols == 0
            || block_rows > Self::MAX_EDGE
            || block_cols > Self::MAX_EDGE
        {
            return Err(CsbError::InvalidBlockShape {
                block_rows,
                block_cols,
            });
        }
        Ok(Self {
            block_rows,
            block_cols,
        })
    }

    pub fn square(edge: usize) -> Result<Self, CsbError> {
        Self::new(edge, edge)
    }

    /// Smallest `(rows, cols)` at least as large as the input that the blocks tile.
    pub fn padded_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        (
            rows.div_ceil(self.block_rows) * self.block_rows,
            cols.div_ceil(self.block_cols) * self.block_cols,
        )
    }

    pub fn divides(&self, rows: usize, cols: usize) -> bool {
        rows.is_multiple_of(self.block_rows) && cols.is_multiple_of(self.block_cols)
    }
}

/// Errors raised by matrix construction and the CSB kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsbError {
    #[error("invalid block shape {block_rows}x{block_cols}: edges must lie in 1..=65535")]
    InvalidBlockShape { block_rows: usize, block_cols: usize },

    #[error("matrix {rows}x{cols} cannot be tiled by {block_rows}x{block_cols} blocks without padding")]
    NotDivisible {
        rows: usize,
        cols: usize,
        block_rows: usize,
        block_cols: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{what} has length {actual}, expected {expected}")]
    ArrayLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("block {block}: {reason}")]
    InvalidBlock { block: usize, reason: String },

    #[error("matrix stores no values")]
    Empty,
}
