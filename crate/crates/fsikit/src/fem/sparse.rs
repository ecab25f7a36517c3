//! Compressed sparse row matrices sized for P1 finite element systems.
//!
//! Column indices are strictly increasing within each row and duplicate
//! entries are merged at construction, so patterns can be reused across
//! repeated numeric assemblies (`zero_values` + `add_at`).

use crate::error::{FsiError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in triplets.iter() {
            debug_assert!(i < nrows && j < ncols);
            if last == Some((i, j)) {
                let n = vals.len();
                vals[n - 1] += v;
            } else {
                col_idx.push(j);
                vals.push(v);
                row_ptr[i + 1] = col_idx.len();
                last = Some((i, j));
            }
        }
        // rows without entries inherit the previous offset
        for i in 1..=nrows {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn zero_values(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` to entry (i, j). The position must exist in the pattern.
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k] += v,
            Err(_) => panic!("entry ({i}, {j}) not present in sparsity pattern"),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    /// y += alpha * A x
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] += alpha * s;
        }
    }

    /// y += alpha * A^T x
    pub fn mul_transpose_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for i in 0..self.nrows {
            let xi = alpha * x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.vals[k] * xi;
            }
        }
    }

    /// Dot product of row i with x.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            s += self.vals[k] * x[self.col_idx[k]];
        }
        s
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = counts;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let pos = next[j];
                col_idx[pos] = i;
                vals[pos] = self.vals[k];
                next[j] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// C = A * B by Gustavson's row-by-row algorithm.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut accum = vec![0.0f64; n];
        let mut marker = vec![usize::MAX; n];
        let mut active: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            active.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k];
                let kk = self.col_idx[k];
                for l in other.row_ptr[kk]..other.row_ptr[kk + 1] {
                    let j = other.col_idx[l];
                    if marker[j] != i {
                        marker[j] = i;
                        accum[j] = 0.0;
                        active.push(j);
                    }
                    accum[j] += a * other.vals[l];
                }
            }
            active.sort_unstable();
            for &j in &active {
                col_idx.push(j);
                vals.push(accum[j]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, alpha: f64) {
        self.vals.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Right-multiplies by a diagonal matrix in place: A <- A * diag(d).
    pub fn scale_cols(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.ncols);
        for k in 0..self.vals.len() {
            self.vals[k] *= d[self.col_idx[k]];
        }
    }

    /// Replaces row i by the identity row (diagonal 1, rest 0). The diagonal
    /// position must exist in the pattern.
    pub fn set_identity_row(&mut self, i: usize) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let mut found = false;
        for k in lo..hi {
            if self.col_idx[k] == i {
                self.vals[k] = 1.0;
                found = true;
            } else {
                self.vals[k] = 0.0;
            }
        }
        assert!(found, "diagonal ({i}, {i}) missing from pattern");
    }

    pub fn zero_row(&mut self, i: usize) {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            self.vals[k] = 0.0;
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Validates the CSR structure invariants.
    pub fn check_structure(&self) -> Result<()> {
        if self.row_ptr.len() != self.nrows + 1 {
            return Err(FsiError::Invariant("row_ptr length mismatch".into()));
        }
        for i in 0..self.nrows {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(FsiError::Invariant(format!("row offsets decrease at row {i}")));
            }
            let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(FsiError::Invariant(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dense vector helpers shared by the solver stack.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
