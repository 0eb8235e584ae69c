//! Penalized-complexity priors for precision and autocorrelation
//! hyperparameters.
//!
//! The precision prior is exponential on the standard deviation, calibrated
//! by Pr(σ > u) = α. The correlation prior shrinks toward the base model
//! ρ = 1 with distance d(ρ) = √(1-ρ), exponential in d truncated to the
//! support d ∈ (0, √2), calibrated by Pr(ρ > u0) = α0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPrecisionPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcPrecisionPrior {
    pub fn new(u: f64, alpha: f64) -> Result<Self> {
        if !(u > 0.0) {
            return Err(Error::InvalidInput(format!("PC prior requires u > 0, got {u}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "PC prior requires alpha in (0,1), got {alpha}"
            )));
        }
        Ok(Self { u, alpha })
    }

    /// Exponential rate λ = -ln(α)/u.
    pub fn rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    /// Log density on the σ scale.
    pub fn log_density_sigma(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lambda = self.rate();
        lambda.ln() - lambda * sigma
    }

    /// Log density on the log-precision scale ξ = ln(σ⁻²), including the
    /// change-of-variables term |dσ/dξ| = σ/2.
    pub fn log_density_log_precision(&self, xi: f64) -> f64 {
        let sigma = (-0.5 * xi).exp();
        self.log_density_sigma(sigma) + sigma.ln() - 2f64.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcCorrelationPrior {
    pub u0: f64,
    pub alpha0: f64,
    /// Rate on the distance scale; solved from (u0, α0) at construction.
    lambda: f64,
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl PcCorrelationPrior {
    pub fn new(u0: f64, alpha0: f64) -> Result<Self> {
        if !(u0 > -1.0 && u0 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "correlation prior requires u0 in (-1,1), got {u0}"
            )));
        }
        if !(alpha0 > 0.0 && alpha0 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "correlation prior requires alpha0 in (0,1), got {alpha0}"
            )));
        }
        let d0 = (1.0 - u0).sqrt();
        let lambda = solve_rate(d0, alpha0)?;
        Ok(Self { u0, alpha0, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Log density on the ρ scale, ρ ∈ (-1, 1).
    pub fn log_density_rho(&self, rho: f64) -> f64 {
        if !(rho > -1.0 && rho < 1.0) {
            return f64::NEG_INFINITY;
        }
        let d = (1.0 - rho).sqrt();
        // π(d) = λ e^{-λd} / (1 - e^{-λ√2}), |dd/dρ| = 1/(2d)
        log_truncated_exp_density(self.lambda, d) - (2.0 * d).ln()
    }
}

/// Log density of the exponential(λ) truncated to (0, √2), valid for any
/// real λ (λ = 0 is the uniform limit).
fn log_truncated_exp_density(lambda: f64, d: f64) -> f64 {
    if lambda.abs() < 1e-10 {
        return -(SQRT2.ln()) - lambda * d + ln_norm_small(lambda);
    }
    // ln λ - λd - ln(1 - e^{-λ√2}) handling both signs of λ
    lambda.abs().ln() - lambda * d - (-(lambda * SQRT2)).exp_m1().abs().ln()
}

// series for ln(λ√2 / (1 - e^{-λ√2})) near λ = 0
fn ln_norm_small(lambda: f64) -> f64 {
    let t = lambda * SQRT2;
    (t / 2.0) - t * t / 24.0
}

/// CDF mass on (0, d) of the truncated exponential.
fn truncated_exp_cdf(lambda: f64, d: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        return d / SQRT2;
    }
    (-(lambda * d)).exp_m1() / (-(lambda * SQRT2)).exp_m1()
}

fn solve_rate(d0: f64, alpha0: f64) -> Result<f64> {
    // Pr(d < d0) = alpha0; the CDF is increasing in λ, solve by bisection.
    let f = |l: f64| truncated_exp_cdf(l, d0) - alpha0;
    let mut lo = -1.0f64;
    let mut hi = 1.0f64;
    for _ in 0..90 {
        if f(lo) < 0.0 {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..90 {
        if f(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cannot calibrate correlation prior at d0={d0}, alpha0={alpha0}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
