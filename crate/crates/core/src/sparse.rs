//! Minimal symmetric sparse matrices (full storage, CSR) built from triplets.

use crate::error::{Error, Result};

/// Symmetric sparse matrix in CSR form with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymCsr {
    /// Build from (row, col, value) triplets; duplicates are summed. Only one
    /// triangle needs to be supplied, the mirror entry is added automatically
    /// (diagonal entries are not doubled).
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() * 2);
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::InvalidInput(format!(
                    "triplet ({r},{c}) out of range for n={n}"
                )));
            }
            full.push((r, c, v));
            if r != c {
                full.push((c, r, v));
            }
        }
        full.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(full.len());
        let mut values = Vec::with_capacity(full.len());
        let mut k = 0;
        while k < full.len() {
            let (r, c, mut v) = full[k];
            k += 1;
            while k < full.len() && full[k].0 == r && full[k].1 == c {
                v += full[k].2;
                k += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] = col_idx.len();
        }
        for r in 0..n {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Sum of two symmetric matrices (sorted row merge).
    pub fn add(&self, other: &SymCsr) -> SymCsr {
        debug_assert_eq!(self.n, other.n);
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let next_a = ca.get(i).copied().unwrap_or(usize::MAX);
                let next_b = cb.get(j).copied().unwrap_or(usize::MAX);
                if next_a == next_b {
                    col_idx.push(next_a);
                    values.push(va[i] + vb[j]);
                    i += 1;
                    j += 1;
                } else if next_a < next_b {
                    col_idx.push(next_a);
                    values.push(va[i]);
                    i += 1;
                } else {
                    col_idx.push(next_b);
                    values.push(vb[j]);
                    j += 1;
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        SymCsr {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Iterate all stored (row, col) pairs.
    pub fn pattern(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, _) = self.row(r);
            cols.iter().map(move |&c| (r, c))
        })
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut row_acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row_acc += v * x[*c];
            }
            acc += x[r] * row_acc;
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[r][*c] = *v;
            }
        }
        m
    }
}

/// Sparse vector as parallel index/value arrays, kept sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub n: usize,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new(n: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_unstable_by_key(|e| e.0);
        let (idx, val) = entries.into_iter().unzip();
        Self { n, idx, val }
    }

    pub fn dot_dense(&self, x: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(i, v)| v * x[*i])
            .sum()
    }

    /// Dot product with another sparse vector (both index-sorted).
    pub fn dot_sparse(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.idx.len() && j < other.idx.len() {
            match self.idx[i].cmp(&other.idx[j]) {
                std::cmp::Ordering::Equal => {
                    acc += self.val[i] * other.val[j];
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        acc
    }

    pub fn norm2_sq(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, v) in self.idx.iter().zip(&self.val) {
            x[*i] = *v;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triplets_merge_and_mirror() {
        // 2x2: [[2, -1], [-1, 3]] with a duplicate on the diagonal
        let m = SymCsr::from_triplets(2, &[(0, 0, 1.0), (0, 0, 1.0), (0, 1, -1.0), (1, 1, 3.0)])
            .unwrap();
        let d = m.to_dense();
        assert_relative_eq!(d[0][0], 2.0);
        assert_relative_eq!(d[0][1], -1.0);
        assert_relative_eq!(d[1][0], -1.0);
        assert_relative_eq!(d[1][1], 3.0);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn matvec_and_quad_form() {
        let m = SymCsr::from_triplets(3, &[(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0), (0, 2, 1.0)])
            .unwrap();
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_relative_eq!(y[0], 5.0);
        assert_relative_eq!(y[1], 4.0);
        assert_relative_eq!(y[2], 7.0);
        assert_relative_eq!(m.quad_form(&x), 1.0 * 5.0 + 2.0 * 4.0 + 3.0 * 7.0);
    }

    #[test]
    fn sparse_vec_dot() {
        let v = SparseVec::new(5, vec![(3, 2.0), (0, 1.0)]);
        assert_eq!(v.idx, vec![0, 3]);
        assert_relative_eq!(v.dot_dense(&[1.0, 9.0, 9.0, 4.0, 9.0]), 9.0);
    }
}
