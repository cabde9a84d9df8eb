//! Minimal compressed-sparse-column storage for QP data.

use nalgebra::DMatrix;

/// Coordinate-format accumulator; duplicate entries are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn extend(&mut self, other: &TripletBuilder) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn build(&self) -> SparseMatrix {
        let mut entries = self.entries.clone();
        // Stable, so duplicates sum in insertion order and mirrored entries match.
        entries.sort_by_key(|&(r, c, _)| (c, r));

        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(row, col, value)` for every stored entry, column-major.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (r, c, v) in self.iter() {
            y[r] += v * x[c];
        }
        y
    }

    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut x = vec![0.0; self.ncols];
        for (r, c, v) in self.iter() {
            x[c] += v * y[r];
        }
        x
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.iter().map(|(r, c, v)| x[r] * v * x[c]).sum()
    }

    /// Upper triangle (including diagonal) of a square matrix.
    pub fn upper_triangle(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            if r <= c {
                b.push(r, c, v);
            }
        }
        b.build()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for (r, c, v) in self.iter() {
            b.push(c, r, v);
        }
        b.build()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        let mut diff = TripletBuilder::new(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            diff.push(r, c, v);
        }
        for (r, c, v) in t.iter() {
            diff.push(r, c, -v);
        }
        diff.build().values.iter().all(|v| v.abs() <= tol)
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.ncols);
        let mut b = TripletBuilder::new(self.nrows + other.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            b.push(r, c, v);
        }
        for (r, c, v) in other.iter() {
            b.push(self.nrows + r, c, v);
        }
        b.build()
    }

    /// Column indices touched by each row.
    pub fn row_patterns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for (r, c, v) in self.iter() {
            rows[r].push((c, v));
        }
        rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(0, 1, 1.0);
        b.push(1, 2, 2.0);
        b.push(0, 1, 3.0);
        b.push(1, 0, 0.0);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![4.0, 2.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 1.0]), vec![0.0, 4.0, 2.0]);
    }

    #[test]
    fn symmetry_and_triangle() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 2.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        b.push(1, 1, 3.0);
        let m = b.build();
        assert!(m.is_symmetric(0.0));
        assert_eq!(m.upper_triangle().nnz(), 3);
        assert_eq!(m.quad_form(&[1.0, -1.0]), 3.0);
        b.push(1, 0, 0.5);
        assert!(!b.build().is_symmetric(1e-12));
    }
}
