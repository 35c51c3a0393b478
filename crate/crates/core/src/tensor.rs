//! Dense `f64` kernels: row-major matrices, stable softmax, RMS norm, rotary
//! embedding and greedy argmax.
//!
//! Everything here is a pure function over borrowed inputs. Transcendentals go
//! through `libm` so results are identical on every platform.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Value written into score positions a query may not attend to.
pub const MASK: f64 = f64::NEG_INFINITY;

/// Base of the rotary frequency schedule.
pub const ROPE_BASE: f64 = 10_000.0;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    detail: format!("row {i} has {} values, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

/// Standard matrix product `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Row vector times matrix: `x · w` with `x.len() == w.rows()`.
pub fn vecmat(x: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    if x.len() != w.rows {
        return Err(Error::Shape {
            op: "vecmat",
            detail: format!("1x{} times {}x{}", x.len(), w.rows, w.cols),
        });
    }
    let mut out = vec![0.0; w.cols];
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wkj) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wkj;
        }
    }
    Ok(out)
}

/// Numerically stable softmax over one score row.
///
/// The row maximum is subtracted before exponentiation. Entries equal to
/// [`MASK`] come out as exactly `0.0`.
pub fn softmax_row(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .filter(|&s| s != MASK)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateRow);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .map(|&s| if s == MASK { 0.0 } else { libm::exp(s - max) })
        .collect();
    let sum: f64 = out.iter().sum();
    for w in &mut out {
        *w /= sum;
    }
    Ok(out)
}

/// `x_i * gain_i / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != gain.len() {
        return Err(Error::Shape {
            op: "rms_norm",
            detail: format!("x has {} values, gain has {}", x.len(), gain.len()),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("rms_norm input"));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Config(format!("rms_norm eps must be >= 0, got {eps}")));
    }
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / libm::sqrt(mean_sq + eps);
    Ok(x.iter().zip(gain).map(|(v, g)| v * g * inv).collect())
}

/// Rotary position embedding applied in place to every row of `m`.
///
/// Row `r` is at absolute position `position_offset + r`. Column pairs
/// `(2d, 2d + 1)` rotate by `pos * ROPE_BASE^(-2d / cols)`.
pub fn rope_apply(m: &Matrix, position_offset: usize) -> Result<Matrix> {
    let mut out = m.clone();
    rope_in_place(&mut out, position_offset)?;
    Ok(out)
}

pub fn rope_in_place(m: &mut Matrix, position_offset: usize) -> Result<()> {
    let dim = m.cols;
    if !dim.is_multiple_of(2) {
        return Err(Error::Shape {
            op: "rope_apply",
            detail: format!("column count must be even, got {dim}"),
        });
    }
    for r in 0..m.rows {
        let pos = (position_offset + r) as f64;
        let row = m.row_mut(r);
        for d in 0..dim / 2 {
            let freq = libm::pow(ROPE_BASE, -((2 * d) as f64) / dim as f64);
            let (sin, cos) = libm::sincos(pos * freq);
            let (a, b) = (row[2 * d], row[2 * d + 1]);
            row[2 * d] = a * cos - b * sin;
            row[2 * d + 1] = a * sin + b * cos;
        }
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_tie_low(v: &[f64]) -> Result<usize> {
    let (first, rest) = v.split_first().ok_or(Error::EmptyInput("argmax input"))?;
    let mut best = (0, *first);
    for (i, &x) in rest.iter().enumerate() {
        if x > best.1 {
            best = (i + 1, x);
        }
    }
    Ok(best.0)
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}
