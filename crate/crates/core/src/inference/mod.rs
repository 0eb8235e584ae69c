//! Exact conditional-Gaussian inference for the latent field.
//!
//! With the Gaussian working likelihood the full conditional of the latent
//! field given the hyperparameters is Gaussian, so the usual nested-Laplace
//! step is exact here: posterior means, marginal likelihoods and predictive
//! moments come from sparse factorizations, and only the hyperparameters are
//! integrated numerically (mode-centred product grid over log-precisions and
//! the transformed autocorrelation).
//!
//! Linear constraints are imposed by conditioning-by-kriging through a
//! regularized precision Q_w = Q + Σ κ_j c_j c_jᵀ. Any regularizer whose
//! range lies inside the constraint span leaves the constrained distribution
//! and the determinant identity det(Q_w)·det(CᵀQ_w⁻¹C)/det(CᵀC) = det_V(Q|V)
//! exactly invariant, so only the constraint directions that the data leave
//! unidentified need regularizing; the rest is free.

pub mod optim;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cholesky::{ProfileFactor, ProfileSymbolic};
use crate::dense::DenseChol;
use crate::design::expit;
use crate::error::{Error, Result};
use crate::model::{
    build_observation_matrix, BlockMeta, Hyperparameters, LatentLayout, ModelSpec,
    ModelStructures, ObsCell, Variant,
};
use crate::sparse::{SparseVec, SymCsr};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub grid_points_per_dim: usize,
    pub grid_half_width_sd: f64,
    pub samples: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Optional warm start for the mode search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Hyperparameters>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            grid_points_per_dim: 5,
            grid_half_width_sd: 2.5,
            samples: 1000,
            max_iterations: 200,
            grad_tol: 1e-5,
            init: None,
        }
    }
}

/// One hyperparameter grid point with its normalized posterior weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGridPoint {
    pub hyper: Hyperparameters,
    pub z: Vec<f64>,
    pub log_posterior: f64,
    pub weight: f64,
}

/// Coverage summary for one (area, cohort) pair, on the probability scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub area: usize,
    pub cohort: usize,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectSummary {
    pub param: String,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// The constrained Gaussian posterior of the latent field at one
/// hyperparameter configuration.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean_c: Vec<f64>,
    mean_u: Vec<f64>,
    precision: SymCsr,
    factor: ProfileFactor,
    w_cols: Vec<Vec<f64>>,
    s_chol: Option<DenseChol>,
    constraints: Vec<SparseVec>,
    log_det_s: f64,
}

impl GaussianPosterior {
    /// Constrained posterior mean.
    pub fn mean(&self) -> &[f64] {
        &self.mean_c
    }

    /// The factorized (regularized) posterior precision.
    pub fn precision(&self) -> &SymCsr {
        &self.precision
    }

    pub fn constraints(&self) -> &[SparseVec] {
        &self.constraints
    }

    pub fn log_det_qw(&self) -> f64 {
        self.factor.log_det()
    }

    pub fn log_det_s(&self) -> f64 {
        self.log_det_s
    }

    fn krige_in_place(&self, x: &mut [f64]) {
        let Some(s_chol) = &self.s_chol else { return };
        let q: Vec<f64> = self.constraints.iter().map(|c| c.dot_dense(x)).collect();
        let r = s_chol.solve(&q);
        for (rj, wj) in r.iter().zip(&self.w_cols) {
            for (xi, wi) in x.iter_mut().zip(wj) {
                *xi -= rj * wi;
            }
        }
    }

    /// Draw from the constrained posterior.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.mean_u.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.factor.sample_from_precision(&z);
        for (xi, mi) in x.iter_mut().zip(&self.mean_u) {
            *xi += mi;
        }
        self.krige_in_place(&mut x);
        x
    }

    /// Mean and variance of the linear functional aᵀx under the constrained
    /// posterior.
    pub fn functional_moments(&self, a: &SparseVec) -> (f64, f64) {
        let mean = a.dot_dense(&self.mean_c);
        let u = self.factor.solve(&a.to_dense());
        let mut var = a.dot_dense(&u);
        if let Some(s_chol) = &self.s_chol {
            let v: Vec<f64> = self.w_cols.iter().map(|w| a.dot_dense(w)).collect();
            let r = s_chol.solve(&v);
            var -= v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        }
        (mean, var.max(0.0))
    }
}

/// Gather Aᵀdiag(1/V̂)A and Aᵀdiag(1/V̂)θ̂ from observation rows.
pub fn data_terms(
    dim: usize,
    rows: &[SparseVec],
    theta_hat: &[f64],
    theta_var: &[f64],
) -> Result<(SymCsr, Vec<f64>)> {
    if rows.len() != theta_hat.len() || rows.len() != theta_var.len() {
        return Err(Error::InvalidInput(
            "observation rows and data vectors must have equal length".into(),
        ));
    }
    let mut trips = Vec::new();
    let mut rhs = vec![0.0; dim];
    for ((row, th), tv) in rows.iter().zip(theta_hat).zip(theta_var) {
        if !(*tv > 0.0) {
            return Err(Error::InvalidInput("observation variance must be positive".into()));
        }
        let w = 1.0 / tv;
        for (ia, va) in row.idx.iter().zip(&row.val) {
            rhs[*ia] += va * th * w;
            for (ib, vb) in row.idx.iter().zip(&row.val) {
                if ib >= ia {
                    trips.push((*ia, *ib, va * vb * w));
                }
            }
        }
    }
    Ok((SymCsr::from_triplets(dim, &trips)?, rhs))
}

fn regularizer(constraints: &[SparseVec], selected: &[bool], scale: f64, dim: usize) -> Result<Option<SymCsr>> {
    let mut trips = Vec::new();
    for (c, sel) in constraints.iter().zip(selected) {
        if !sel {
            continue;
        }
        let kappa = scale / c.norm2_sq();
        for (ia, va) in c.idx.iter().zip(&c.val) {
            for (ib, vb) in c.idx.iter().zip(&c.val) {
                if ib >= ia {
                    trips.push((*ia, *ib, kappa * va * vb));
                }
            }
        }
    }
    if trips.is_empty() {
        Ok(None)
    } else {
        Ok(Some(SymCsr::from_triplets(dim, &trips)?))
    }
}

/// Choose the constraint subset to regularize so that the data plus the
/// rank-one regularizers give a positive-definite quadratic form on
/// span(constraints ∪ free) — the exact condition for the regularized
/// posterior precision to factorize.
fn select_regularizers(
    constraints: &[SparseVec],
    kinds: &[crate::gmrf::ConstraintKind],
    free: &[SparseVec],
    rows: &[SparseVec],
    theta_var: &[f64],
    scale: f64,
) -> Vec<bool> {
    use crate::gmrf::ConstraintKind::*;
    let k = constraints.len();
    let basis: Vec<&SparseVec> = constraints.iter().chain(free.iter()).collect();
    let m = basis.len();
    if m == 0 {
        return Vec::new();
    }
    let norms: Vec<f64> = basis.iter().map(|b| b.norm2_sq().sqrt()).collect();

    // data part X = Bᵀ(AᵀWA)B, norm- and scale-normalized
    let mut x = vec![vec![0.0; m]; m];
    for (row, tv) in rows.iter().zip(theta_var) {
        let coord: Vec<f64> = basis.iter().map(|b| row.dot_sparse(b)).collect();
        for a in 0..m {
            for b in 0..=a {
                x[a][b] += coord[a] * coord[b] / tv;
            }
        }
    }
    // normalized regularizer directions: κ_j c_jc_jᵀ becomes the outer
    // product of (b_aᵀc_j)/(|c_j|·|b_a|) in the normalized coordinates
    let reg_dirs: Vec<Vec<f64>> = constraints
        .iter()
        .map(|c| {
            let inv_norm = 1.0 / c.norm2_sq().sqrt();
            basis
                .iter()
                .enumerate()
                .map(|(a, b)| inv_norm * b.dot_sparse(c) / norms[a])
                .collect()
        })
        .collect();
    for a in 0..m {
        for b in 0..=a {
            let v = x[a][b] / (norms[a] * norms[b] * scale);
            x[a][b] = v;
            x[b][a] = v;
        }
    }

    let identified = |selected: &[bool]| -> bool {
        let mut g = x.clone();
        for (j, sel) in selected.iter().enumerate() {
            if !sel {
                continue;
            }
            for a in 0..m {
                for b in 0..m {
                    g[a][b] += reg_dirs[j][a] * reg_dirs[j][b];
                }
            }
        }
        spd_with_relative_pivots(g, 1e-10)
    };

    // individually unsupported directions always need their regularizer
    let base: Vec<bool> = (0..k).map(|j| x[j][j] < 1e-8).collect();
    let mut selected = base.clone();
    if identified(&selected) {
        return selected;
    }
    let cost_order = |kind: crate::gmrf::ConstraintKind| match kind {
        AlphaSum | DeltaSum | PhiSpacePerTime => 0,
        PhiTimePerArea => 1,
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| (cost_order(kinds[j]), j));
    let mut added = Vec::new();
    for &j in &order {
        if selected[j] {
            continue;
        }
        selected[j] = true;
        added.push(j);
        if identified(&selected) {
            break;
        }
    }
    if !identified(&selected) {
        // a genuinely unidentified free direction surfaces later as the
        // factorization error with its block name
        return selected;
    }
    // backward prune: the scan may have added directions that a later
    // addition made redundant
    for &j in added.iter().rev() {
        selected[j] = false;
        if !identified(&selected) {
            selected[j] = true;
        }
    }
    selected
}

// Cholesky with a relative pivot floor; detects numerically singular G.
fn spd_with_relative_pivots(mut g: Vec<Vec<f64>>, rel_tol: f64) -> bool {
    let m = g.len();
    let scale = (0..m).map(|i| g[i][i]).fold(0.0f64, f64::max).max(1e-300);
    for i in 0..m {
        for j in 0..=i {
            let mut s = g[i][j];
            for k in 0..j {
                s -= g[i][k] * g[j][k];
            }
            if i == j {
                if !(s > rel_tol * scale) {
                    return false;
                }
                g[i][i] = s.sqrt();
            } else {
                g[i][j] = s / g[j][j];
            }
        }
    }
    true
}

fn gram_log_det(constraints: &[SparseVec]) -> Result<f64> {
    if constraints.is_empty() {
        return Ok(0.0);
    }
    let k = constraints.len();
    let mut g = vec![vec![0.0; k]; k];
    let dense: Vec<Vec<f64>> = constraints.iter().map(|c| c.to_dense()).collect();
    for i in 0..k {
        for j in 0..=i {
            let dot = constraints[i].dot_dense(&dense[j]);
            g[i][j] = dot;
            g[j][i] = dot;
        }
    }
    let chol = DenseChol::factor(&g).ok_or_else(|| Error::InvalidInput(
        "constraint vectors are linearly dependent".into(),
    ))?;
    Ok(chol.log_det())
}

/// Factorize Q_w and apply the kriging correction for the constraint set.
fn posterior_from_parts(
    symbolic: &Arc<ProfileSymbolic>,
    q_w: SymCsr,
    rhs: &[f64],
    constraints: &[SparseVec],
    block_of: &dyn Fn(usize) -> String,
) -> Result<GaussianPosterior> {
    let factor = ProfileFactor::factor(symbolic, &q_w, block_of)?;
    let mean_u = factor.solve(rhs);
    let k = constraints.len();
    let (w_cols, s_chol, log_det_s, mean_c) = if k == 0 {
        (Vec::new(), None, 0.0, mean_u.clone())
    } else {
        let w_cols: Vec<Vec<f64>> = constraints
            .iter()
            .map(|c| factor.solve(&c.to_dense()))
            .collect();
        let mut s = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                s[i][j] = constraints[i].dot_dense(&w_cols[j]);
            }
        }
        // symmetrize against round-off
        for i in 0..k {
            for j in 0..i {
                let v = 0.5 * (s[i][j] + s[j][i]);
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        let chol = DenseChol::factor(&s).ok_or_else(|| Error::NumericalSingularity {
            block: "constraints".into(),
            detail: "CᵀQ⁻¹C is not positive definite".into(),
        })?;
        let log_det_s = chol.log_det();
        let mut mean_c = mean_u.clone();
        let q: Vec<f64> = constraints.iter().map(|c| c.dot_dense(&mean_c)).collect();
        let r = chol.solve(&q);
        for (rj, wj) in r.iter().zip(&w_cols) {
            for (xi, wi) in mean_c.iter_mut().zip(wj) {
                *xi -= rj * wi;
            }
        }
        (w_cols, Some(chol), log_det_s, mean_c)
    };
    Ok(GaussianPosterior {
        mean_c,
        mean_u,
        precision: q_w,
        factor,
        w_cols,
        s_chol,
        constraints: constraints.to_vec(),
        log_det_s,
    })
}

/// Stand-alone constrained-posterior computation with a natural ordering.
/// All constraints are regularized; exactness does not depend on the choice.
pub fn conditional_posterior(
    q_prior: &SymCsr,
    constraints: &[SparseVec],
    rows: &[SparseVec],
    theta_hat: &[f64],
    theta_var: &[f64],
) -> Result<GaussianPosterior> {
    let n = q_prior.n;
    let (data_q, rhs) = data_terms(n, rows, theta_hat, theta_var)?;
    let q_post = q_prior.add(&data_q);
    let scale = (0..n)
        .map(|i| {
            let (cols, vals) = q_post.row(i);
            cols.iter().zip(vals).find(|(c, _)| **c == i).map(|(_, v)| *v).unwrap_or(0.0)
        })
        .sum::<f64>()
        / n as f64;
    let selected = vec![true; constraints.len()];
    let q_w = match regularizer(constraints, &selected, scale.max(1.0), n)? {
        Some(reg) => q_post.add(&reg),
        None => q_post,
    };
    let symbolic = Arc::new(ProfileSymbolic::new(
        n,
        q_w.pattern().collect::<Vec<_>>().into_iter(),
        (0..n).collect(),
    ));
    posterior_from_parts(&symbolic, q_w, &rhs, constraints, &|i| format!("latent[{i}]"))
}

/// Exact log marginal likelihood of the data given fixed hyperparameters,
/// for an arbitrary prior described by `blocks` (ranks and log
/// pseudo-determinants) with `free_null_dims` unpenalized flat directions.
pub fn log_marginal_gaussian(
    q_prior: &SymCsr,
    blocks: &[BlockMeta],
    gp: &GaussianPosterior,
    rows: &[SparseVec],
    theta_hat: &[f64],
    theta_var: &[f64],
    log_det_ctc: f64,
) -> f64 {
    let n = q_prior.n as f64;
    let k = gp.constraints.len() as f64;
    let prior_norm: f64 = blocks
        .iter()
        .map(|b| -(b.rank as f64) / 2.0 * LN_2PI + 0.5 * b.log_pdet)
        .sum();
    let prior_quad = -0.5 * q_prior.quad_form(&gp.mean_c);
    let mut lik = 0.0;
    for ((row, th), tv) in rows.iter().zip(theta_hat).zip(theta_var) {
        let resid = th - row.dot_dense(&gp.mean_c);
        lik += -0.5 * (2.0 * PI * tv).ln() - resid * resid / (2.0 * tv);
    }
    let post = -((n - k) / 2.0) * LN_2PI + 0.5 * (gp.log_det_qw() + gp.log_det_s() - log_det_ctc);
    prior_norm + prior_quad + lik - post
}

/// Per-fit precomputation: observation products, constraint set, solver
/// ordering, and the regularizer for data-unidentified constraint directions.
pub struct FitWorkspace<'a> {
    pub structures: &'a ModelStructures,
    pub cells: Vec<ObsCell>,
    rows: Vec<SparseVec>,
    data_q: SymCsr,
    rhs: Vec<f64>,
    constraint_vecs: Vec<SparseVec>,
    reg: Option<SymCsr>,
    symbolic: Arc<ProfileSymbolic>,
    log_det_ctc: f64,
    free_null_dims: usize,
}

impl<'a> FitWorkspace<'a> {
    pub fn new(structures: &'a ModelStructures, cells: Vec<ObsCell>) -> Result<Self> {
        let layout = structures.layout;
        let dim = layout.dim();
        let rows = build_observation_matrix(&cells, &layout)?;
        let theta_hat: Vec<f64> = cells.iter().map(|c| c.theta_hat).collect();
        let theta_var: Vec<f64> = cells.iter().map(|c| c.theta_var).collect();
        let (data_q, rhs) = data_terms(dim, &rows, &theta_hat, &theta_var)?;

        let repr = representative_hyper(structures.spec.variant);
        let prior_repr = structures.assemble_prior(&repr)?;
        let constraint_vecs: Vec<SparseVec> =
            prior_repr.constraints.iter().map(|c| c.vector.clone()).collect();
        let free_null_dims = prior_repr.free_null_dims;
        let free_vecs = structures.free_null_vectors();

        let q_repr_post = prior_repr.q.add(&data_q);
        let scale = (0..dim)
            .map(|i| {
                let (cols, vals) = q_repr_post.row(i);
                cols.iter().zip(vals).find(|(c, _)| **c == i).map(|(_, v)| *v).unwrap_or(0.0)
            })
            .sum::<f64>()
            .max(1.0)
            / dim as f64;

        // The factorization needs Q_post + reg positive definite on the whole
        // prior null space span(constraints ∪ free). Start from the
        // constraint directions without individual data support, then close
        // any jointly unidentified combinations greedily, preferring the
        // families whose rank-one regularizers stay inside the solver
        // envelope (the per-area temporal null directions stride across
        // cohort slices and are tried last).
        let kinds: Vec<crate::gmrf::ConstraintKind> =
            prior_repr.constraints.iter().map(|c| c.kind).collect();
        let selected = select_regularizers(
            &constraint_vecs,
            &kinds,
            &free_vecs,
            &rows,
            &theta_var,
            scale,
        );
        let reg = regularizer(&constraint_vecs, &selected, scale, dim)?;

        let mut pattern: Vec<(usize, usize)> = q_repr_post.pattern().collect();
        if let Some(r) = &reg {
            pattern.extend(r.pattern());
        }
        let symbolic = Arc::new(ProfileSymbolic::new(
            dim,
            pattern.into_iter(),
            structures.solver_permutation(),
        ));
        let log_det_ctc = gram_log_det(&constraint_vecs)?;

        Ok(Self {
            structures,
            cells,
            rows,
            data_q,
            rhs,
            constraint_vecs,
            reg,
            symbolic,
            log_det_ctc,
            free_null_dims,
        })
    }

    pub fn rows(&self) -> &[SparseVec] {
        &self.rows
    }

    pub fn envelope_size(&self) -> usize {
        self.symbolic.envelope_size()
    }

    pub fn free_null_dims(&self) -> usize {
        self.free_null_dims
    }

    fn theta_hat(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.theta_hat).collect()
    }

    fn theta_var(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.theta_var).collect()
    }

    /// Constrained posterior and prior bookkeeping at one hyper configuration.
    pub fn posterior(&self, hyper: &Hyperparameters) -> Result<(GaussianPosterior, Vec<BlockMeta>, SymCsr)> {
        let (q_prior, blocks) = self.structures.assemble_q_blocks(hyper)?;
        let mut q_w = q_prior.add(&self.data_q);
        if let Some(reg) = &self.reg {
            q_w = q_w.add(reg);
        }
        let layout = self.structures.layout;
        let gp = posterior_from_parts(&self.symbolic, q_w, &self.rhs, &self.constraint_vecs, &|i| {
            layout.block_name(i)
        })?;
        Ok((gp, blocks, q_prior))
    }

    /// log π(θ̂ | hyper), exact.
    pub fn log_marginal_data(&self, hyper: &Hyperparameters) -> Result<f64> {
        let (gp, blocks, q_prior) = self.posterior(hyper)?;
        Ok(log_marginal_gaussian(
            &q_prior,
            &blocks,
            &gp,
            &self.rows,
            &self.theta_hat(),
            &self.theta_var(),
            self.log_det_ctc,
        ))
    }

    /// log π(hyper) + log π(θ̂ | hyper), the hyperparameter log posterior up
    /// to a constant, with the prior on the (σ, ρ) scale.
    pub fn log_marginal_hyper(&self, hyper: &Hyperparameters) -> Result<f64> {
        Ok(log_hyper_prior(&self.structures.spec, hyper)? + self.log_marginal_data(hyper)?)
    }
}

/// Hyperprior density on the natural (σ, ρ) scale.
pub fn log_hyper_prior(spec: &ModelSpec, hyper: &Hyperparameters) -> Result<f64> {
    hyper.validate(spec.variant)?;
    let p = &spec.priors;
    let mut lp = p.alpha.log_density_sigma(hyper.sigma_alpha)
        + p.gamma.log_density_sigma(hyper.sigma_gamma)
        + p.delta.log_density_sigma(hyper.sigma_delta)
        + p.tau.log_density_sigma(hyper.sigma_tau)
        + p.phi.log_density_sigma(hyper.sigma_phi)
        + p.epsilon.log_density_sigma(hyper.sigma_epsilon);
    if spec.variant.has_rho() {
        lp += spec.rho_prior.log_density_rho(hyper.rho_phi.unwrap());
    }
    Ok(lp)
}

pub fn z_dim(variant: Variant) -> usize {
    6 + variant.has_rho() as usize
}

/// Unconstrained optimizer coordinates: log precisions, then logit((ρ+1)/2).
pub fn hyper_from_z(variant: Variant, z: &[f64]) -> Hyperparameters {
    let sig = |j: usize| (-0.5 * z[j]).exp();
    Hyperparameters {
        sigma_alpha: sig(0),
        sigma_gamma: sig(1),
        sigma_delta: sig(2),
        sigma_tau: sig(3),
        sigma_phi: sig(4),
        sigma_epsilon: sig(5),
        rho_phi: variant.has_rho().then(|| 2.0 * expit(z[6]) - 1.0),
    }
}

pub fn z_from_hyper(variant: Variant, hyper: &Hyperparameters) -> Vec<f64> {
    let mut z: Vec<f64> = hyper.sigmas().iter().map(|(_, s)| -2.0 * s.ln()).collect();
    if variant.has_rho() {
        let rho = hyper.rho_phi.expect("AR1 variant carries rho");
        z.push(((1.0 + rho) / (1.0 - rho)).ln());
    }
    z
}

/// Hyperprior in z coordinates, including Jacobians.
fn log_hyper_prior_z(spec: &ModelSpec, z: &[f64]) -> f64 {
    let p = &spec.priors;
    let pcs = [p.alpha, p.gamma, p.delta, p.tau, p.phi, p.epsilon];
    let mut lp: f64 = pcs
        .iter()
        .zip(z)
        .map(|(pc, zi)| pc.log_density_log_precision(*zi))
        .sum();
    if spec.variant.has_rho() {
        let rho = 2.0 * expit(z[6]) - 1.0;
        lp += spec.rho_prior.log_density_rho(rho) + ((1.0 - rho * rho) / 2.0).ln();
    }
    lp
}

fn representative_hyper(variant: Variant) -> Hyperparameters {
    Hyperparameters {
        sigma_alpha: 1.0,
        sigma_gamma: 1.0,
        sigma_delta: 1.0,
        sigma_tau: 1.0,
        sigma_phi: 1.0,
        sigma_epsilon: 1.0,
        rho_phi: variant.has_rho().then_some(0.5),
    }
}

fn default_init(spec: &ModelSpec) -> Hyperparameters {
    let p = &spec.priors;
    Hyperparameters {
        sigma_alpha: p.alpha.u / 2.0,
        sigma_gamma: p.gamma.u / 2.0,
        sigma_delta: p.delta.u / 2.0,
        sigma_tau: p.tau.u / 2.0,
        sigma_phi: p.phi.u / 2.0,
        sigma_epsilon: p.epsilon.u / 2.0,
        rho_phi: spec.variant.has_rho().then_some(0.5),
    }
}

#[derive(Debug, Clone)]
pub struct ExploreResult {
    pub grid: Vec<HyperGridPoint>,
    pub mode: Hyperparameters,
    pub mode_z: Vec<f64>,
    pub mode_log_posterior: f64,
    pub mode_grad_norm: f64,
    pub evaluations: usize,
}

/// Quasi-Newton mode search over z, then a mode-centred product grid with
/// normalized weights.
pub fn explore_hyper(ws: &FitWorkspace, config: &InferenceConfig) -> Result<ExploreResult> {
    let spec = &ws.structures.spec;
    let variant = spec.variant;
    let d = z_dim(variant);
    let init = config.init.unwrap_or_else(|| default_init(spec));
    init.validate(variant)?;
    let z0 = z_from_hyper(variant, &init);

    // surface a real diagnostic if even the starting point fails
    ws.posterior(&hyper_from_z(variant, &z0))?;

    let objective = |z: &[f64]| -> f64 {
        let hyper = hyper_from_z(variant, z);
        match ws.log_marginal_data(&hyper) {
            Ok(lmd) => -(lmd + log_hyper_prior_z(spec, z)),
            Err(_) => f64::INFINITY,
        }
    };
    let mut f = |z: &[f64]| objective(z);
    let opt = optim::minimize(&mut f, &z0, config.max_iterations, config.grad_tol)?;
    let mode_z = opt.x.clone();
    let mode = hyper_from_z(variant, &mode_z);
    let mode_log_posterior = -opt.f;

    let g = config.grid_points_per_dim.max(1);
    let total = (g as f64).powi(d as i32);
    if total > 2e5 {
        return Err(Error::Config(format!(
            "hyperparameter grid of {g}^{d} points is too large; reduce grid_points_per_dim"
        )));
    }

    let points: Vec<Vec<f64>> = if g == 1 {
        vec![mode_z.clone()]
    } else {
        let hessian = optim::numerical_hessian(&mut f, &mode_z);
        let sd: Vec<f64> = match DenseChol::factor(&hessian) {
            Some(chol) => {
                let inv = chol.inverse();
                (0..d).map(|j| inv[j][j].max(1e-8).sqrt()).collect()
            }
            None => (0..d).map(|j| (1.0 / hessian[j][j].max(1e-4)).sqrt()).collect(),
        };
        let offsets: Vec<f64> = (0..g)
            .map(|k| {
                (k as f64 - (g as f64 - 1.0) / 2.0) / ((g as f64 - 1.0) / 2.0)
                    * config.grid_half_width_sd
            })
            .collect();
        let mut pts = Vec::with_capacity(total as usize);
        let mut idx = vec![0usize; d];
        loop {
            pts.push(
                (0..d)
                    .map(|j| mode_z[j] + offsets[idx[j]] * sd[j])
                    .collect::<Vec<f64>>(),
            );
            let mut j = 0;
            loop {
                if j == d {
                    break;
                }
                idx[j] += 1;
                if idx[j] < g {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
        pts
    };

    let mut log_posts: Vec<f64> = points
        .par_iter()
        .map(|z| {
            let hyper = hyper_from_z(variant, z);
            match ws.log_marginal_data(&hyper) {
                Ok(lmd) => lmd + log_hyper_prior_z(spec, z),
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .collect();
    if points.len() == 1 {
        log_posts[0] = mode_log_posterior;
    }

    let max_lp = log_posts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_lp.is_finite() {
        return Err(Error::NumericalSingularity {
            block: "hyperparameters".into(),
            detail: "no grid point has a finite posterior".into(),
        });
    }
    let unnorm: Vec<f64> = log_posts.iter().map(|lp| (lp - max_lp).exp()).collect();
    let total_w: f64 = unnorm.iter().sum();
    let grid: Vec<HyperGridPoint> = points
        .into_iter()
        .zip(log_posts)
        .zip(unnorm)
        .map(|((z, lp), w)| HyperGridPoint {
            hyper: hyper_from_z(variant, &z),
            z,
            log_posterior: lp,
            weight: w / total_w,
        })
        .collect();

    Ok(ExploreResult {
        grid,
        mode,
        mode_z,
        mode_log_posterior,
        mode_grad_norm: opt.grad_norm,
        evaluations: opt.evaluations,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1)))
}

/// Draw latent samples from the grid-mixture posterior. Reproducible for a
/// fixed seed regardless of thread count: grid points own independent seeded
/// streams and results merge by draw index.
pub fn sample_posterior(
    ws: &FitWorkspace,
    grid: &[HyperGridPoint],
    num_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if grid.is_empty() || num_samples == 0 {
        return Err(Error::InvalidInput(
            "sampling requires a non-empty grid and at least one sample".into(),
        ));
    }
    let mut cum = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for p in grid {
        acc += p.weight;
        cum.push(acc);
    }
    let mut master = stream_rng(seed, 0);
    let assignment: Vec<usize> = (0..num_samples)
        .map(|_| {
            let u: f64 = master.random::<f64>() * acc;
            cum.partition_point(|c| *c < u).min(grid.len() - 1)
        })
        .collect();

    let mut by_point: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (draw, gi) in assignment.iter().enumerate() {
        by_point.entry(*gi).or_default().push(draw);
    }

    let results: Result<Vec<(Vec<usize>, Vec<Vec<f64>>)>> = by_point
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(gi, draws)| {
            let (gp, _, _) = ws.posterior(&grid[gi].hyper)?;
            let mut rng = stream_rng(seed, gi as u64 + 1);
            let samples: Vec<Vec<f64>> = draws.iter().map(|_| gp.sample(&mut rng)).collect();
            Ok((draws, samples))
        })
        .collect();

    let mut out: Vec<Option<Vec<f64>>> = vec![None; num_samples];
    for (draws, samples) in results? {
        for (draw, sample) in draws.into_iter().zip(samples) {
            out[draw] = Some(sample);
        }
    }
    Ok(out.into_iter().map(|s| s.expect("all draws assigned")).collect())
}

/// Nearest-rank quantile of a sorted slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Posterior routine-coverage summaries per (area, cohort): the bias terms
/// (survey effects and the campaign shift) are excluded.
pub fn ri_coverage(samples: &[Vec<f64>], layout: &LatentLayout) -> Vec<PosteriorSummary> {
    let mut out = Vec::with_capacity(layout.num_areas * layout.num_cohorts);
    let mut vals = vec![0.0f64; samples.len()];
    for i in 0..layout.num_areas {
        for b in 0..layout.num_cohorts {
            for (m, s) in samples.iter().enumerate() {
                vals[m] = expit(
                    s[layout.beta0()]
                        + s[layout.alpha(i)]
                        + s[layout.gamma(i)]
                        + s[layout.delta(b)]
                        + s[layout.tau(b)]
                        + s[layout.phi(i, b)],
                );
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(PosteriorSummary {
                area: i,
                cohort: b,
                median: nearest_rank(&vals, 0.5),
                lower95: nearest_rank(&vals, 0.025),
                upper95: nearest_rank(&vals, 0.975),
            });
        }
    }
    out
}

/// Posterior quantiles of β0, β1 and the odds multiplier exp(β1).
pub fn fixed_effects(samples: &[Vec<f64>], layout: &LatentLayout) -> Vec<FixedEffectSummary> {
    let summarize = |name: &str, mut vals: Vec<f64>| {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        FixedEffectSummary {
            param: name.to_string(),
            median: nearest_rank(&vals, 0.5),
            lower95: nearest_rank(&vals, 0.025),
            upper95: nearest_rank(&vals, 0.975),
        }
    };
    let beta0: Vec<f64> = samples.iter().map(|s| s[layout.beta0()]).collect();
    let beta1: Vec<f64> = samples.iter().map(|s| s[layout.beta1()]).collect();
    let exp_beta1: Vec<f64> = beta1.iter().map(|b| odds_multiplier(*b)).collect();
    vec![
        summarize("beta0", beta0),
        summarize("beta1", beta1),
        summarize("exp_beta1", exp_beta1),
    ]
}

/// Reporting path for the campaign effect: odds multiplier for a logit shift.
pub fn odds_multiplier(beta1: f64) -> f64 {
    beta1.exp()
}

/// Per-cell predictive means and variances of θ_c at every grid point,
/// the sufficient statistics for the assessment metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellPredictive {
    pub weights: Vec<f64>,
    /// mean[g][c]: posterior mean of θ_c at grid point g.
    pub mean: Vec<Vec<f64>>,
    /// var[g][c]: posterior variance of θ_c at grid point g.
    pub var: Vec<Vec<f64>>,
}

pub fn cell_predictives(ws: &FitWorkspace, grid: &[HyperGridPoint]) -> Result<CellPredictive> {
    let per_point: Result<Vec<(Vec<f64>, Vec<f64>)>> = grid
        .par_iter()
        .map(|p| {
            let (gp, _, _) = ws.posterior(&p.hyper)?;
            let mut means = Vec::with_capacity(ws.rows.len());
            let mut vars = Vec::with_capacity(ws.rows.len());
            for row in &ws.rows {
                let (m, v) = gp.functional_moments(row);
                means.push(m);
                vars.push(v);
            }
            Ok((means, vars))
        })
        .collect();
    let per_point = per_point?;
    Ok(CellPredictive {
        weights: grid.iter().map(|p| p.weight).collect(),
        mean: per_point.iter().map(|(m, _)| m.clone()).collect(),
        var: per_point.into_iter().map(|(_, v)| v).collect(),
    })
}
