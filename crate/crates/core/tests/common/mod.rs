//! Generators and oracles shared by the integration tests. Oracles work on
//! plain nested vectors so they share no code with the library.

#![allow(dead_code)]

use csb_core::csb::DenseMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rows = Vec<Vec<f64>>;

/// Block-patterned matrix: every `b x b` block keeps the cross product of a
/// random row subset and a random column subset. Returns the dense rows.
pub fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize, b: usize) -> Rows {
    random_pattern_rect(rng, rows, cols, b, b)
}

pub fn random_pattern_rect(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bh: usize, bw: usize) -> Rows {
    let mut out = vec![vec![0.0; cols]; rows];
    for br in 0..rows / bh {
        for bc in 0..cols / bw {
            let m = rng.random_range(0..=bh);
            let n = rng.random_range(0..=bw);
            let rs = sample(rng, bh, m).into_vec();
            let cs = sample(rng, bw, n).into_vec();
            for &r in &rs {
                for &c in &cs {
                    let v: f64 = StandardNormal.sample(rng);
                    // keep every kernel cell nonzero
                    out[br * bh + r][bc * bw + c] = if v == 0.0 { 1.0 } else { v };
                }
            }
        }
    }
    out
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Rows {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn to_dense(rows: &Rows) -> DenseMatrix<f64> {
    let c = rows.first().map_or(0, Vec::len);
    DenseMatrix::from_fn(rows.len(), c, |r, k| rows[r][k])
}

pub fn from_dense(d: &DenseMatrix<f64>) -> Rows {
    (0..d.rows()).map(|r| d.row(r).to_vec()).collect()
}

pub fn matvec(a: &Rows, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

/// Largest absolute difference over the infinity norm of `want` (at least 1).
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Reference CSB projection: per block-column the `floor(p * rows)` rows with
/// the smallest segment norms are zeroed, then per block-row the columns.
/// Ties go to the higher index.
pub fn projection_oracle(w: &Rows, b: usize, pr: f64) -> Rows {
    let p = 1.0 - (1.0 - pr).sqrt();
    let (rows, cols) = (w.len(), w[0].len());
    let mut z = w.clone();
    let pick = |norms: Vec<f64>, k: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..norms.len()).collect();
        idx.sort_by(|&a, &c| norms[a].partial_cmp(&norms[c]).unwrap().then(c.cmp(&a)));
        idx.truncate(k);
        idx
    };
    let kr = (p * rows as f64 + 1e-9).floor() as usize;
    for bc in 0..cols / b {
        let norms = (0..rows)
            .map(|r| (bc * b..(bc + 1) * b).map(|c| z[r][c] * z[r][c]).sum())
            .collect();
        for r in pick(norms, kr) {
            z[r][bc * b..(bc + 1) * b].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let kc = (p * cols as f64 + 1e-9).floor() as usize;
    for br in 0..rows / b {
        let norms = (0..cols)
            .map(|c| (br * b..(br + 1) * b).map(|r| z[r][c] * z[r][c]).sum())
            .collect();
        for c in pick(norms, kc) {
            for row in &mut z[br * b..(br + 1) * b] {
                row[c] = 0.0;
            }
        }
    }
    z
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
