//! Profile (skyline) Cholesky factorization under a fixed fill-reducing
//! permutation.
//!
//! The symbolic step records, per permuted row, the first column reachable
//! from the matrix pattern; the numeric step factorizes inside that envelope.
//! The permutation is supplied by the caller (see `model::solver_permutation`)
//! and is deterministic, so repeated runs factorize identically.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::SymCsr;

/// Symbolic envelope for a fixed pattern and permutation.
#[derive(Debug, Clone)]
pub struct ProfileSymbolic {
    pub n: usize,
    /// perm[k] = original index placed at position k.
    pub perm: Vec<usize>,
    /// iperm[original] = position.
    pub iperm: Vec<usize>,
    /// first[i] = leftmost column in permuted row i's profile.
    first: Vec<usize>,
    /// row_off[i] = storage offset of row i; row i holds columns first[i]..=i.
    row_off: Vec<usize>,
    storage: usize,
}

impl ProfileSymbolic {
    /// `pattern` lists (row, col) pairs in original coordinates; symmetry is
    /// implied. `perm` must be a permutation of 0..n.
    pub fn new(n: usize, pattern: impl Iterator<Item = (usize, usize)>, perm: Vec<usize>) -> Self {
        debug_assert_eq!(perm.len(), n);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (r, c) in pattern {
            let (i, j) = (iperm[r].max(iperm[c]), iperm[r].min(iperm[c]));
            if j < first[i] {
                first[i] = j;
            }
        }
        let mut row_off = vec![0usize; n + 1];
        for i in 0..n {
            row_off[i + 1] = row_off[i] + (i - first[i] + 1);
        }
        let storage = row_off[n];
        Self {
            n,
            perm,
            iperm,
            first,
            row_off,
            storage,
        }
    }

    pub fn envelope_size(&self) -> usize {
        self.storage
    }
}

/// Numeric Cholesky factor L with P Q Pᵀ = L Lᵀ.
#[derive(Debug, Clone)]
pub struct ProfileFactor {
    sym: Arc<ProfileSymbolic>,
    l: Vec<f64>,
    log_det: f64,
}

impl ProfileFactor {
    /// Scatter `q` into the envelope and factorize. `block_of` names the
    /// latent block of an original index for singularity diagnostics.
    pub fn factor(
        sym: &Arc<ProfileSymbolic>,
        q: &SymCsr,
        block_of: &dyn Fn(usize) -> String,
    ) -> Result<Self> {
        debug_assert_eq!(q.n, sym.n);
        let n = sym.n;
        let mut l = vec![0.0f64; sym.storage];
        let mut diag_in = vec![0.0f64; n];
        for r in 0..n {
            let (cols, vals) = q.row(r);
            let i = sym.iperm[r];
            for (c, v) in cols.iter().zip(vals) {
                let j = sym.iperm[*c];
                if j < sym.first[i.max(j)] {
                    return Err(Error::NumericalSingularity {
                        block: block_of(r),
                        detail: "matrix entry outside symbolic envelope".into(),
                    });
                }
                if j < i {
                    l[sym.row_off[i] + j - sym.first[i]] = *v;
                } else if j == i {
                    l[sym.row_off[i] + i - sym.first[i]] = *v;
                    diag_in[i] = *v;
                }
            }
        }

        let mut log_det = 0.0;
        for i in 0..n {
            let fi = sym.first[i];
            let (before, tail) = l.split_at_mut(sym.row_off[i]);
            let row_i = &mut tail[..i - fi + 1];
            for j in fi..i {
                let fj = sym.first[j];
                let lo = fi.max(fj);
                let row_j = &before[sym.row_off[j]..sym.row_off[j + 1]];
                let s: f64 = row_i[lo - fi..j - fi]
                    .iter()
                    .zip(&row_j[lo - fj..j - fj])
                    .map(|(a, b)| a * b)
                    .sum();
                row_i[j - fi] = (row_i[j - fi] - s) / row_j[j - fj];
            }
            let s: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
            let d = row_i[i - fi] - s;
            let scale = diag_in[i].abs().max(1e-300);
            if !(d > 1e-13 * scale) || !d.is_finite() {
                return Err(Error::NumericalSingularity {
                    block: block_of(sym.perm[i]),
                    detail: format!(
                        "non-positive pivot {d:.3e} at latent index {} (diagonal {:.3e})",
                        sym.perm[i], diag_in[i]
                    ),
                });
            }
            let pivot = d.sqrt();
            row_i[i - fi] = pivot;
            log_det += 2.0 * pivot.ln();
        }

        Ok(Self {
            sym: Arc::clone(sym),
            l,
            log_det,
        })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.l[self.sym.row_off[i]..self.sym.row_off[i + 1]]
    }

    /// Solve Q x = b (original coordinates).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.sym.n;
        let mut w: Vec<f64> = (0..n).map(|i| b[self.sym.perm[i]]).collect();
        self.solve_permuted_in_place(&mut w);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.sym.perm[i]] = w[i];
        }
        x
    }

    /// Forward + backward substitution in permuted coordinates.
    fn solve_permuted_in_place(&self, w: &mut [f64]) {
        let n = self.sym.n;
        for i in 0..n {
            let fi = self.sym.first[i];
            let row = self.row(i);
            let s: f64 = row[..i - fi]
                .iter()
                .zip(&w[fi..i])
                .map(|(a, b)| a * b)
                .sum();
            w[i] = (w[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.sym.first[i];
            let row = self.row(i);
            w[i] /= row[i - fi];
            let wi = w[i];
            for (k, lv) in (fi..i).zip(row) {
                w[k] -= lv * wi;
            }
        }
    }

    /// Solve Lᵀ w = z for standard-normal z, returning Pᵀ w: a draw from
    /// N(0, Q⁻¹) in original coordinates.
    pub fn sample_from_precision(&self, z: &[f64]) -> Vec<f64> {
        let n = self.sym.n;
        let mut w = z.to_vec();
        for i in (0..n).rev() {
            let fi = self.sym.first[i];
            let row = self.row(i);
            w[i] /= row[i - fi];
            let wi = w[i];
            for (k, lv) in (fi..i).zip(row) {
                w[k] -= lv * wi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.sym.perm[i]] = w[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_spd(n: usize, seed: u64) -> Vec<(usize, usize, f64)> {
        // deterministic congruential junk is enough for test matrices
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 2.0 + n as f64 + next().abs()));
            for j in 0..i {
                if next() > 0.2 {
                    triplets.push((i, j, next()));
                }
            }
        }
        triplets
    }

    #[test]
    fn factor_matches_dense_solve_and_logdet() {
        for seed in 0..5u64 {
            let n = 12 + seed as usize;
            let trips = random_spd(n, seed + 1);
            let q = SymCsr::from_triplets(n, &trips).unwrap();
            let dense = q.to_dense();
            let nd = nalgebra::DMatrix::from_fn(n, n, |r, c| dense[r][c]);
            let chol = nd.clone().cholesky().expect("test matrix is SPD");

            // a scrambled but deterministic permutation
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(3);
            let sym = Arc::new(ProfileSymbolic::new(
                n,
                q.row_ptr
                    .windows(2)
                    .enumerate()
                    .flat_map(|(r, w)| q.col_idx[w[0]..w[1]].iter().map(move |&c| (r, c)))
                    .collect::<Vec<_>>()
                    .into_iter(),
                perm,
            ));
            let f = ProfileFactor::factor(&sym, &q, &|_| "test".into()).unwrap();

            let logdet_dense: f64 = (0..n).map(|i| 2.0 * chol.l()[(i, i)].ln()).sum();
            assert_relative_eq!(f.log_det(), logdet_dense, epsilon = 1e-9);

            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = f.solve(&b);
            let xd = chol.solve(&nalgebra::DVector::from_column_slice(&b));
            for i in 0..n {
                assert_relative_eq!(x[i], xd[i], epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn singular_matrix_reports_block() {
        // rank-1 matrix: second pivot fails
        let q = SymCsr::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]).unwrap();
        let sym = Arc::new(ProfileSymbolic::new(
            2,
            [(0usize, 0usize), (0, 1), (1, 1)].into_iter(),
            vec![0, 1],
        ));
        let err = ProfileFactor::factor(&sym, &q, &|i| format!("block{i}")).unwrap_err();
        match err {
            Error::NumericalSingularity { block, .. } => assert_eq!(block, "block1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sample_covariance_matches_inverse() {
        // With L from Q = LLᵀ, x = L⁻ᵀz has covariance Q⁻¹; check first moments
        // of the linear map rather than sampling: columns of L⁻ᵀ times unit z.
        let q = SymCsr::from_triplets(2, &[(0, 0, 4.0), (1, 1, 2.0), (0, 1, 1.0)]).unwrap();
        let sym = Arc::new(ProfileSymbolic::new(
            2,
            [(0usize, 0usize), (0, 1), (1, 1)].into_iter(),
            vec![0, 1],
        ));
        let f = ProfileFactor::factor(&sym, &q, &|_| "t".into()).unwrap();
        // covariance = E[x xᵀ] over unit vectors: sum_k col_k col_kᵀ
        let c0 = f.sample_from_precision(&[1.0, 0.0]);
        let c1 = f.sample_from_precision(&[0.0, 1.0]);
        let cov = [
            [c0[0] * c0[0] + c1[0] * c1[0], c0[0] * c0[1] + c1[0] * c1[1]],
            [c0[1] * c0[0] + c1[1] * c1[0], c0[1] * c0[1] + c1[1] * c1[1]],
        ];
        // Q⁻¹ = 1/7 [[2, -1], [-1, 4]]
        assert_relative_eq!(cov[0][0], 2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(cov[0][1], -1.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(cov[1][1], 4.0 / 7.0, epsilon = 1e-12);
    }
}
