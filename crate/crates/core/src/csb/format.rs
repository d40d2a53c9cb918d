//! `CSB1` binary format, little-endian throughout:
//!
//! ```text
//! magic        b"CSB1"
//! u32          rows, cols, block_rows, block_cols
//! u32          block_count = (rows / block_rows) * (cols / block_cols)
//! u16 x 2      per block: kernel_rows, kernel_cols (row-major block order)
//! u16 ...      row_idx
//! u16 ...      col_idx
//! f32 ...      val (IEEE-754 binary32)
//! ```
//!
//! Values are narrowed to `f32` on write; any trailing byte is an error.

use std::path::Path;

use thiserror::Error;

use super::{BlockShape, CsbError, CsbMatrix};
use crate::Scalar;

pub const MAGIC: [u8; 4] = *b"CSB1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"CSB1\"")]
    BadMagic([u8; 4]),

    #[error("stream truncated while reading {what}: need {needed} bytes, {available} left")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("{0} trailing bytes after the value stream")]
    TrailingBytes(usize),

    #[error("header declares {declared} blocks, shape implies {expected}")]
    BlockCount { declared: usize, expected: usize },

    #[error("invalid header: {0}")]
    Header(String),

    #[error(transparent)]
    Invariant(#[from] CsbError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn serialize<T: Scalar>(csb: &CsbMatrix<T>) -> Vec<u8> {
    let shape = csb.block_shape();
    let mut out = Vec::with_capacity(
        24 + 4 * csb.block_count() + 2 * (csb.row_idx().len() + csb.col_idx().len()) + 4 * csb.nnz(),
    );
    out.extend_from_slice(&MAGIC);
    for v in [
        csb.rows(),
        csb.cols(),
        shape.block_rows,
        shape.block_cols,
        csb.block_count(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (m, n) in csb.kernel_rows().iter().zip(csb.kernel_cols()) {
        out.extend_from_slice(&m.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
    }
    for i in csb.row_idx().iter().chain(csb.col_idx()) {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for v in csb.values() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u16s(&mut self, count: usize, what: &'static str) -> Result<Vec<u16>, FormatError> {
        let b = self.take(count.checked_mul(2).ok_or_else(|| overflow(what))?, what)?;
        Ok(b.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }
}

fn overflow(what: &str) -> FormatError {
    FormatError::Header(format!("{what} size overflows"))
}

pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<CsbMatrix<T>, FormatError> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    let magic = rd.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let rows = rd.u32("rows")?;
    let cols = rd.u32("cols")?;
    let block_rows = rd.u32("block_rows")?;
    let block_cols = rd.u32("block_cols")?;
    let declared = rd.u32("block_count")?;

    let shape = BlockShape::new(block_rows, block_cols)?;
    if !shape.divides(rows, cols) {
        return Err(CsbError::NotDivisible {
            rows,
            cols,
            block_rows,
            block_cols,
        }
        .into());
    }
    let expected = (rows / block_rows) * (cols / block_cols);
    if declared != expected {
        return Err(FormatError::BlockCount { declared, expected });
    }

    let counts = rd.u16s(expected.checked_mul(2).ok_or_else(|| overflow("kernel counts"))?, "kernel counts")?;
    let kernel_rows: Vec<u16> = counts.iter().step_by(2).copied().collect();
    let kernel_cols: Vec<u16> = counts.iter().skip(1).step_by(2).copied().collect();
    let n_row: usize = kernel_rows.iter().map(|&m| m as usize).sum();
    let n_col: usize = kernel_cols.iter().map(|&n| n as usize).sum();
    let n_val: usize = kernel_rows
        .iter()
        .zip(&kernel_cols)
        .map(|(&m, &n)| m as usize * n as usize)
        .sum();
    let row_idx = rd.u16s(n_row, "row_idx")?;
    let col_idx = rd.u16s(n_col, "col_idx")?;
    let raw = rd.take(n_val.checked_mul(4).ok_or_else(|| overflow("val"))?, "val")?;
    let val = raw
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let trailing = bytes.len() - rd.pos;
    if trailing != 0 {
        return Err(FormatError::TrailingBytes(trailing));
    }
    Ok(CsbMatrix::from_parts(
        rows,
        cols,
        shape,
        kernel_rows,
        kernel_cols,
        row_idx,
        col_idx,
        val,
    )?)
}

pub fn write_file<T: Scalar>(path: impl AsRef<Path>, csb: &CsbMatrix<T>) -> Result<(), FormatError> {
    std::fs::write(path, serialize(csb))?;
    Ok(())
}

pub fn read_file<T: Scalar>(path: impl AsRef<Path>) -> Result<CsbMatrix<T>, FormatError> {
    deserialize(&std::fs::read(path)?)
}
