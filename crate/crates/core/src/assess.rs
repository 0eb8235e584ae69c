//! Model assessment under the Gaussian working likelihood.
//!
//! All three criteria are closed-form functionals of the per-cell predictive
//! means and variances at each hyperparameter grid point. LCPO uses exact
//! Gaussian leave-one-out downdating (no refitting): removing cell c divides
//! its Gaussian likelihood factor out of the posterior of θ_c, and the grid
//! weights downdate as w_g / CPO_{c,g}.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{CellPredictive, HyperGridPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceShares {
    pub icar: f64,
    pub space_iid: f64,
    pub rw2: f64,
    pub time_iid: f64,
    pub space_time: f64,
    pub survey: f64,
}

impl VarianceShares {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.icar,
            self.space_iid,
            self.rw2,
            self.time_iid,
            self.space_time,
            self.survey,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub dic: f64,
    pub waic: f64,
    pub lcpo: f64,
    pub variance_shares: VarianceShares,
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

fn check_lengths(pred: &CellPredictive, theta_hat: &[f64], theta_var: &[f64]) -> Result<usize> {
    let c = theta_hat.len();
    if theta_var.len() != c {
        return Err(Error::InvalidInput("theta_hat and theta_var length mismatch".into()));
    }
    if pred.weights.len() != pred.mean.len() || pred.weights.len() != pred.var.len() {
        return Err(Error::InvalidInput("predictive grid is ragged".into()));
    }
    for (m, v) in pred.mean.iter().zip(&pred.var) {
        if m.len() != c || v.len() != c {
            return Err(Error::InvalidInput("predictive rows do not match the cell count".into()));
        }
    }
    Ok(c)
}

/// Deviance information criterion: D(θ̄) + 2·p_D with p_D = D̄ - D(θ̄),
/// expectations over the hyper-grid Gaussian mixture.
pub fn dic(pred: &CellPredictive, theta_hat: &[f64], theta_var: &[f64]) -> Result<f64> {
    let cells = check_lengths(pred, theta_hat, theta_var)?;
    let mut d_hat = 0.0;
    let mut p_d = 0.0;
    for c in 0..cells {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (g, w) in pred.weights.iter().enumerate() {
            mean += w * pred.mean[g][c];
            second += w * (pred.var[g][c] + pred.mean[g][c] * pred.mean[g][c]);
        }
        let var = (second - mean * mean).max(0.0);
        d_hat += -2.0 * log_normal_density(theta_hat[c], mean, theta_var[c]);
        p_d += var / theta_var[c];
    }
    Ok(d_hat + 2.0 * p_d)
}

/// Watanabe-Akaike information criterion with the variance-based penalty.
pub fn waic(pred: &CellPredictive, theta_hat: &[f64], theta_var: &[f64]) -> Result<f64> {
    let cells = check_lengths(pred, theta_hat, theta_var)?;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for c in 0..cells {
        // lppd: log of the mixture predictive density; penalty: Var of log p
        let mut dens = 0.0;
        let mut e_t = 0.0;
        let mut e_t2 = 0.0;
        for (g, w) in pred.weights.iter().enumerate() {
            let m = pred.mean[g][c];
            let v = pred.var[g][c];
            let d = theta_hat[c] - m;
            dens += w * log_normal_density(theta_hat[c], m, theta_var[c] + v).exp();
            // moments of T = (θ̂-θ)² under N(m, v)
            e_t += w * (d * d + v);
            e_t2 += w * (d.powi(4) + 6.0 * d * d * v + 3.0 * v * v);
        }
        lppd += dens.ln();
        let var_t = (e_t2 - e_t * e_t).max(0.0);
        p_waic += var_t / (4.0 * theta_var[c] * theta_var[c]);
    }
    Ok(-2.0 * (lppd - p_waic))
}

/// Exact leave-one-out log-score: mean over cells of -log CPO_c.
///
/// Per grid point, π(θ_c | y_{-c}) = π(θ_c | y) / N(θ̂_c; θ_c, V̂_c) is a
/// Gaussian division; per cell the grid weights rescale by 1/CPO_{c,g},
/// giving CPO_c = [Σ_g w_g / CPO_{c,g}]⁻¹.
pub fn lcpo(pred: &CellPredictive, theta_hat: &[f64], theta_var: &[f64]) -> Result<f64> {
    let cells = check_lengths(pred, theta_hat, theta_var)?;
    let mut total = 0.0;
    let mut bad_cells = Vec::new();
    for c in 0..cells {
        // log Σ_g exp(ln w_g - ln CPO_{c,g}), stabilized
        let mut terms = Vec::with_capacity(pred.weights.len());
        for (g, w) in pred.weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let m = pred.mean[g][c];
            let v = pred.var[g][c];
            if v >= theta_var[c] * (1.0 - 1e-12) {
                bad_cells.push(c);
                break;
            }
            let (m_out, v_out) = if v <= 0.0 {
                (m, 0.0)
            } else {
                let prec_out = 1.0 / v - 1.0 / theta_var[c];
                let mean_out = (m / v - theta_hat[c] / theta_var[c]) / prec_out;
                (mean_out, 1.0 / prec_out)
            };
            let log_cpo_g = log_normal_density(theta_hat[c], m_out, theta_var[c] + v_out);
            terms.push(w.ln() - log_cpo_g);
        }
        if bad_cells.last() == Some(&c) {
            continue;
        }
        let max_t = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_inv_cpo = max_t + terms.iter().map(|t| (t - max_t).exp()).sum::<f64>().ln();
        total += log_inv_cpo; // -ln CPO_c
    }
    if !bad_cells.is_empty() {
        return Err(Error::NumericalSingularity {
            block: "leave-one-out".into(),
            detail: format!(
                "non-positive predictive variance after downdating for cells {bad_cells:?}"
            ),
        });
    }
    Ok(total / cells as f64)
}

fn weighted_median(mut pairs: Vec<(f64, f64)>) -> f64 {
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return *v;
        }
    }
    pairs.last().map(|p| p.0).unwrap_or(f64::NAN)
}

/// Posterior medians of the component variances, normalized to proportions.
pub fn variance_decomposition(grid: &[HyperGridPoint]) -> Result<VarianceShares> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("variance decomposition needs a non-empty grid".into()));
    }
    let median_sq = |pick: &dyn Fn(&HyperGridPoint) -> f64| -> f64 {
        weighted_median(
            grid.iter()
                .map(|p| (pick(p).powi(2), p.weight))
                .collect(),
        )
    };
    let vals = [
        median_sq(&|p| p.hyper.sigma_alpha),
        median_sq(&|p| p.hyper.sigma_gamma),
        median_sq(&|p| p.hyper.sigma_delta),
        median_sq(&|p| p.hyper.sigma_tau),
        median_sq(&|p| p.hyper.sigma_phi),
        median_sq(&|p| p.hyper.sigma_epsilon),
    ];
    let total: f64 = vals.iter().sum();
    Ok(VarianceShares {
        icar: vals[0] / total,
        space_iid: vals[1] / total,
        rw2: vals[2] / total,
        time_iid: vals[3] / total,
        space_time: vals[4] / total,
        survey: vals[5] / total,
    })
}

pub fn assessment_report(
    pred: &CellPredictive,
    theta_hat: &[f64],
    theta_var: &[f64],
    grid: &[HyperGridPoint],
) -> Result<AssessmentReport> {
    Ok(AssessmentReport {
        dic: dic(pred, theta_hat, theta_var)?,
        waic: waic(pred, theta_hat, theta_var)?,
        lcpo: lcpo(pred, theta_hat, theta_var)?,
        variance_shares: variance_decomposition(grid)?,
    })
}

/// Assessment of a fitted workspace over its hyperparameter grid.
pub fn assess_fit(
    ws: &crate::inference::FitWorkspace,
    grid: &[HyperGridPoint],
) -> Result<AssessmentReport> {
    let pred = crate::inference::cell_predictives(ws, grid)?;
    let theta_hat: Vec<f64> = ws.cells.iter().map(|c| c.theta_hat).collect();
    let theta_var: Vec<f64> = ws.cells.iter().map(|c| c.theta_var).collect();
    assessment_report(&pred, &theta_hat, &theta_var, grid)
}
