//! Shared dense oracles for the integration suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use ricover_core::sparse::{SparseVec, SymCsr};

/// Orthonormal basis of the complement of span(c_vectors).
pub fn complement_basis(n: usize, c: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut seeds: Vec<DVector<f64>> = c.iter().map(|v| DVector::from_column_slice(v)).collect();
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        seeds.push(e);
    }
    let k = c.len();
    for seed in seeds {
        let mut w = seed;
        for u in &basis {
            let d = u.dot(&w);
            w -= u * d;
        }
        let norm = w.norm();
        if norm > 1e-9 {
            basis.push(w / norm);
        }
    }
    // first k vectors span C; the rest span the complement
    basis.split_off(k)
}

pub struct DenseOracle {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Posterior of a Gaussian prior + Gaussian observations restricted to the
/// constraint subspace, computed densely.
pub fn dense_constrained_posterior(
    q_prior: &DMatrix<f64>,
    constraints: &[Vec<f64>],
    rows: &[Vec<f64>],
    theta_hat: &[f64],
    theta_var: &[f64],
) -> DenseOracle {
    let n = q_prior.nrows();
    let mut q_post = q_prior.clone();
    let mut b = DVector::zeros(n);
    for ((row, th), tv) in rows.iter().zip(theta_hat).zip(theta_var) {
        let a = DVector::from_column_slice(row);
        q_post += &a * a.transpose() / *tv;
        b += a * (*th / *tv);
    }
    let u_basis = complement_basis(n, constraints);
    let m = u_basis.len();
    let mut u = DMatrix::zeros(n, m);
    for (j, col) in u_basis.iter().enumerate() {
        u.set_column(j, col);
    }
    let reduced = u.transpose() * &q_post * &u;
    let reduced_inv = reduced.try_inverse().expect("reduced posterior precision is PD");
    let mean = &u * (&reduced_inv * (u.transpose() * b));
    let cov = &u * reduced_inv * u.transpose();
    DenseOracle { mean, cov }
}

/// Random small model: PSD prior with a few exact null directions used as
/// constraints, plus random sparse observation rows.
pub type RandomModel = (SymCsr, Vec<SparseVec>, Vec<SparseVec>, Vec<f64>, Vec<f64>, usize);

pub fn random_model(rng: &mut ChaCha12Rng) -> RandomModel {
    let n = rng.random_range(5..=30);
    let k = rng.random_range(0..=3.min(n - 2));
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let qr = raw.qr();
    let q_full = qr.q();
    let mut eigs = vec![0.0f64; n];
    for e in eigs.iter_mut().skip(k) {
        *e = 0.1 + 2.0 * rng.random::<f64>();
    }
    let mut qp = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = q_full.column(j);
        qp += col * col.transpose() * eigs[j];
    }
    let constraints: Vec<Vec<f64>> =
        (0..k).map(|j| q_full.column(j).iter().copied().collect()).collect();

    let n_obs = rng.random_range(3..=2 * n);
    let mut rows = Vec::new();
    let mut theta_hat = Vec::new();
    let mut theta_var = Vec::new();
    for _ in 0..n_obs {
        let nnz = rng.random_range(1..=4.min(n));
        let mut entries = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        for _ in 0..nnz {
            let idx = rng.random_range(0..n);
            if used.insert(idx) {
                entries.push((idx, rng.random::<f64>() * 2.0 - 1.0));
            }
        }
        rows.push(SparseVec::new(n, entries));
        theta_hat.push(rng.random::<f64>() * 4.0 - 2.0);
        theta_var.push(0.2 + rng.random::<f64>());
    }

    let mut trips = Vec::new();
    for r in 0..n {
        for c in r..n {
            if qp[(r, c)].abs() > 1e-14 {
                trips.push((r, c, qp[(r, c)]));
            }
        }
    }
    let q_sparse = SymCsr::from_triplets(n, &trips).unwrap();
    let c_sparse: Vec<SparseVec> = constraints
        .iter()
        .map(|v| SparseVec::new(n, v.iter().copied().enumerate().collect()))
        .collect();
    (q_sparse, c_sparse, rows, theta_hat, theta_var, n)
}

pub fn to_dmatrix(q: &SymCsr) -> DMatrix<f64> {
    let d = q.to_dense();
    DMatrix::from_fn(q.n, q.n, |r, c| d[r][c])
}

/// Exact leave-one-out by downdating versus brute-force refit-per-cell over
/// the same hyperparameter grid. Returns (downdated LCPO, refit LCPO).
pub fn lcpo_downdate_vs_refit(
    variant: ricover_core::model::Variant,
    n_cells: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    use ricover_core::inference::{cell_predictives, explore_hyper, FitWorkspace, InferenceConfig};
    use ricover_core::model::{
        default_rho_prior, ComponentPriors, ModelSpec, ModelStructures, ObsCell,
    };

    let spec = ModelSpec {
        variant,
        num_areas: 4,
        num_cohorts: 4,
        num_surveys: 2,
        priors: ComponentPriors::default(),
        rho_prior: default_rho_prior(),
        fixed_effect_precision: 0.001,
    };
    let graph = ricover_core::graph::AdjacencyGraph::lattice(2, 2);
    let structures = ModelStructures::new(&spec, &graph).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    'outer: for a in 0..4 {
        for b in 0..4 {
            for s in 0..2 {
                if cells.len() == n_cells {
                    break 'outer;
                }
                cells.push(ObsCell {
                    area: a,
                    cohort: b,
                    survey: s,
                    x: ((a + b + s) % 2) as u8,
                    theta_hat: rng.random::<f64>() * 2.0 - 1.0,
                    theta_var: 0.4 + rng.random::<f64>(),
                });
            }
        }
    }
    let ws = FitWorkspace::new(&structures, cells.clone()).unwrap();
    let cfg = InferenceConfig {
        grid_points_per_dim: 2,
        grid_half_width_sd: 1.0,
        grad_tol: 1e-3,
        ..Default::default()
    };
    let explore = explore_hyper(&ws, &cfg).unwrap();
    let grid = &explore.grid;
    let pred = cell_predictives(&ws, grid).unwrap();
    let theta_hat: Vec<f64> = cells.iter().map(|c| c.theta_hat).collect();
    let theta_var: Vec<f64> = cells.iter().map(|c| c.theta_var).collect();
    let ours = ricover_core::assess::lcpo(&pred, &theta_hat, &theta_var).unwrap();

    let full_lml: Vec<f64> = grid
        .iter()
        .map(|p| ws.log_marginal_data(&p.hyper).unwrap())
        .collect();
    let mut total = 0.0;
    for c in 0..cells.len() {
        let reduced: Vec<ObsCell> = cells
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != c)
            .map(|(_, cell)| *cell)
            .collect();
        let ws_red = FitWorkspace::new(&structures, reduced).unwrap();
        let mut log_terms = Vec::new();
        for (g, p) in grid.iter().enumerate() {
            let lml_red = ws_red.log_marginal_data(&p.hyper).unwrap();
            let (gp_red, _, _) = ws_red.posterior(&p.hyper).unwrap();
            let row = &ws.rows()[c];
            let (m, v) = gp_red.functional_moments(row);
            let pv = theta_var[c] + v;
            let log_pred = -0.5 * (2.0 * std::f64::consts::PI * pv).ln()
                - (theta_hat[c] - m).powi(2) / (2.0 * pv);
            log_terms.push((p.weight.ln() + lml_red - full_lml[g], log_pred));
        }
        let max_w = log_terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_terms.iter().map(|t| (t.0 - max_w).exp()).sum();
        let cpo: f64 = log_terms
            .iter()
            .map(|t| (t.0 - max_w).exp() * t.1.exp())
            .sum::<f64>()
            / norm;
        total += -cpo.ln();
    }
    (ours, total / cells.len() as f64)
}
