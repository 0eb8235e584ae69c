//! Design-based direct estimation per eligible cell.
//!
//! The point estimate is the Horvitz-Thompson weighted proportion; its
//! variance is the Taylor-linearized, with-replacement, stratified
//! between-cluster variance of the ratio estimator. Logit-scale transforms
//! use the delta method.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::EligibleCell;
use crate::error::{Error, Result};

/// Direct estimate for one (area, cohort, survey) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub area_id: String,
    pub cohort: usize,
    pub survey_id: String,
    pub x: u8,
    pub n: usize,
    pub p_hat: f64,
    pub v_hat: f64,
    pub theta_hat: f64,
    #[serde(rename = "V_hat")]
    pub theta_var: f64,
}

/// Treatment of strata containing a single cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LonePsuPolicy {
    /// Lone cluster sampled with certainty: contributes zero variance.
    Certainty,
    /// Deviation from the grand mean of all cluster totals.
    GrandMean,
}

/// What to do with cells whose direct estimate is degenerate
/// (p ∈ {0,1} or zero design variance).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    Drop,
    /// Clamp p to [1/(2n), 1 - 1/(2n)] and floor the variance at
    /// binomial-at-clamped-p.
    Truncate,
}

/// Weighted proportion and sample size for a cell.
pub fn ht_estimate(cell: &EligibleCell) -> Result<(f64, usize)> {
    let sum_w: f64 = cell.children.iter().map(|c| c.weight).sum();
    if !(sum_w > 0.0) {
        return Err(Error::DegenerateCell {
            area_id: cell.area_id.clone(),
            cohort: cell.cohort,
            survey_id: cell.survey_id.clone(),
            reason: "all weights zero".into(),
        });
    }
    let sum_wy: f64 = cell
        .children
        .iter()
        .map(|c| c.weight * c.mcv1 as f64)
        .sum();
    Ok((sum_wy / sum_w, cell.children.len()))
}

/// Between-cluster variance of the HT proportion.
///
/// Linearized scores z_k = w_k (y_k - p̂) / Σw are totalled per cluster; each
/// stratum h with n_h ≥ 2 clusters contributes n_h/(n_h-1) · Σ_c (Z_hc - Z̄_h)².
pub fn design_variance(cell: &EligibleCell, lone_psu: LonePsuPolicy) -> Result<f64> {
    let (p_hat, _) = ht_estimate(cell)?;
    let sum_w: f64 = cell.children.iter().map(|c| c.weight).sum();

    // cluster totals of the linearized variable, grouped by stratum
    let mut strata: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for c in &cell.children {
        let z = c.weight * (c.mcv1 as f64 - p_hat) / sum_w;
        *strata
            .entry(&c.stratum_id)
            .or_default()
            .entry(&c.cluster_id)
            .or_insert(0.0) += z;
    }

    let all_totals: Vec<f64> = strata
        .values()
        .flat_map(|m| m.values().copied())
        .collect();
    let grand_mean = all_totals.iter().sum::<f64>() / all_totals.len() as f64;

    let mut v = 0.0;
    for clusters in strata.values() {
        let n_h = clusters.len();
        if n_h == 1 {
            match lone_psu {
                LonePsuPolicy::Certainty => {}
                LonePsuPolicy::GrandMean => {
                    let z = clusters.values().next().unwrap();
                    v += (z - grand_mean).powi(2);
                }
            }
            continue;
        }
        let mean_h = clusters.values().sum::<f64>() / n_h as f64;
        let ss: f64 = clusters.values().map(|z| (z - mean_h).powi(2)).sum();
        v += n_h as f64 / (n_h as f64 - 1.0) * ss;
    }
    Ok(v)
}

/// Logit point estimate and its delta-method variance.
pub fn logit_transform(p_hat: f64, v_hat: f64) -> Result<(f64, f64)> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::InvalidInput(format!(
            "logit transform requires p in (0,1), got {p_hat}"
        )));
    }
    if !(v_hat > 0.0) {
        return Err(Error::InvalidInput(format!(
            "logit transform requires v > 0, got {v_hat}"
        )));
    }
    let theta = (p_hat / (1.0 - p_hat)).ln();
    let denom = p_hat * (1.0 - p_hat);
    Ok((theta, v_hat / (denom * denom)))
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Outcome of direct estimation for one cell.
#[derive(Debug, Clone)]
pub enum CellOutcome {
    Estimate(CellEstimate),
    Excluded {
        area_id: String,
        cohort: usize,
        survey_id: String,
        n: usize,
        p_hat: f64,
        reason: String,
    },
}

/// Full direct-estimation step for one eligible cell.
pub fn estimate_cell(
    cell: &EligibleCell,
    lone_psu: LonePsuPolicy,
    degenerate: DegeneratePolicy,
) -> Result<CellOutcome> {
    let (p_raw, n) = ht_estimate(cell)?;
    let v_raw = design_variance(cell, lone_psu)?;

    let boundary_p = !(p_raw > 0.0 && p_raw < 1.0);
    let zero_v = !(v_raw > 0.0);
    let (p_hat, v_hat) = if boundary_p || zero_v {
        match degenerate {
            DegeneratePolicy::Drop => {
                let reason = if boundary_p {
                    format!("p_hat = {p_raw} on the boundary")
                } else {
                    "zero design variance".to_string()
                };
                return Ok(CellOutcome::Excluded {
                    area_id: cell.area_id.clone(),
                    cohort: cell.cohort,
                    survey_id: cell.survey_id.clone(),
                    n,
                    p_hat: p_raw,
                    reason,
                });
            }
            DegeneratePolicy::Truncate => {
                let lo = 1.0 / (2.0 * n as f64);
                let p = p_raw.clamp(lo, 1.0 - lo);
                let v = v_raw.max(p * (1.0 - p) / n as f64);
                (p, v)
            }
        }
    } else {
        (p_raw, v_raw)
    };

    let (theta_hat, theta_var) = logit_transform(p_hat, v_hat)?;
    Ok(CellOutcome::Estimate(CellEstimate {
        area_id: cell.area_id.clone(),
        cohort: cell.cohort,
        survey_id: cell.survey_id.clone(),
        x: cell.sia_indicator,
        n,
        p_hat,
        v_hat,
        theta_hat,
        theta_var,
    }))
}

/// A cell excluded from model fitting, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedCell {
    pub area_id: String,
    pub cohort: usize,
    pub survey_id: String,
    pub n: usize,
    pub p_hat: f64,
    pub reason: String,
}

/// Direct estimation over all eligible cells, splitting out exclusions.
pub fn direct_estimates(
    cells: &[EligibleCell],
    lone_psu: LonePsuPolicy,
    degenerate: DegeneratePolicy,
) -> Result<(Vec<CellEstimate>, Vec<ExcludedCell>)> {
    let mut estimates = Vec::new();
    let mut excluded = Vec::new();
    for cell in cells {
        match estimate_cell(cell, lone_psu, degenerate)? {
            CellOutcome::Estimate(e) => estimates.push(e),
            CellOutcome::Excluded { area_id, cohort, survey_id, n, p_hat, reason } => {
                excluded.push(ExcludedCell { area_id, cohort, survey_id, n, p_hat, reason });
            }
        }
    }
    Ok((estimates, excluded))
}
