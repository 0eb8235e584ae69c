//! Small dense symmetric solves (constraint Gram matrices, hyperparameter
//! Hessians). Row-major `Vec<Vec<f64>>` is plenty at these sizes.

/// Dense Cholesky factor of a small SPD matrix.
#[derive(Debug, Clone)]
pub struct DenseChol {
    n: usize,
    l: Vec<f64>, // row-major lower triangle, full n*n storage
}

impl DenseChol {
    pub fn factor(a: &[Vec<f64>]) -> Option<Self> {
        let n = a.len();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.l[i * self.n + i].ln()).sum()
    }

    pub fn inverse(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut inv = vec![vec![0.0; n]; n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv[i][j] = col[i];
            }
        }
        inv
    }
}
