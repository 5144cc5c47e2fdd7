//! Integer-quantized weight matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;

/// Row-major `i8` matrix with a power-of-two scale exponent
/// (real value = `value * 2^-scale`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scale: i32,
}

impl QuantMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<i8>, scale: i32) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::dim(rows * cols, values.len(), "matrix values"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            scale,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0; rows * cols], 0).expect("non-empty shape")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i8) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values, 0).expect("non-empty shape")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> i32 {
        self.scale
    }

    pub fn with_scale(mut self, scale: i32) -> Self {
        self.scale = scale;
        self
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i8) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> QuantMatrix {
        QuantMatrix::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c)).with_scale(self.scale)
    }

    /// Places element `(i, j)` at `(rows.dest[i], cols.dest[j])`.
    pub fn permute(&self, rows: &Permutation, cols: &Permutation) -> Result<QuantMatrix> {
        if rows.len() != self.rows {
            return Err(Error::dim(self.rows, rows.len(), "row permutation"));
        }
        if cols.len() != self.cols {
            return Err(Error::dim(self.cols, cols.len(), "column permutation"));
        }
        let mut out = vec![0i8; self.values.len()];
        for i in 0..self.rows {
            let dst = rows.get(i) * self.cols;
            for j in 0..self.cols {
                out[dst + cols.get(j)] = self.get(i, j);
            }
        }
        QuantMatrix::new(self.rows, self.cols, out, self.scale)
    }

    /// `v · W` with `i32` accumulation.
    pub fn vecmul(&self, v: &[i32]) -> Result<Vec<i32>> {
        if v.len() != self.rows {
            return Err(Error::dim(self.rows, v.len(), "vector-matrix product"));
        }
        let mut out = vec![0i32; self.cols];
        for (i, &x) in v.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += x * i32::from(w);
            }
        }
        Ok(out)
    }

    /// Number of cells where `self` and `other` differ (shapes must match).
    pub fn hamming(&self, other: &QuantMatrix) -> Result<usize> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(self.values.len(), other.values.len(), "hamming"));
        }
        Ok(self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count())
    }
}

/// Convenience wrapper over [`QuantMatrix::permute`].
pub fn matrix_permute(w: &QuantMatrix, rows: &Permutation, cols: &Permutation) -> Result<QuantMatrix> {
    w.permute(rows, cols)
}
