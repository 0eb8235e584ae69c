//! BFGS with numerical gradients for the hyperparameter mode search.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

const GRAD_STEP: f64 = 1e-4;

pub fn numerical_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = GRAD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian (symmetrized).
pub fn numerical_hessian(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut h = vec![vec![0.0; d]; d];
    let steps: Vec<f64> = x.iter().map(|xi| 2e-3 * xi.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut xp = x.to_vec();
    for i in 0..d {
        xp[i] = x[i] + steps[i];
        let fp = f(&xp);
        xp[i] = x[i] - steps[i];
        let fm = f(&xp);
        xp[i] = x[i];
        h[i][i] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            xp[i] = x[i] + steps[i];
            xp[j] = x[j] + steps[j];
            let fpp = f(&xp);
            xp[j] = x[j] - steps[j];
            let fpm = f(&xp);
            xp[i] = x[i] - steps[i];
            let fmm = f(&xp);
            xp[j] = x[j] + steps[j];
            let fmp = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimize `f` from `x0`. Converges when the gradient infinity norm drops
/// below `grad_tol`; otherwise returns the non-convergence error with an
/// iteration trace.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    max_iterations: usize,
    grad_tol: f64,
) -> Result<OptimResult> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        return Err(Error::NumericalSingularity {
            block: "hyperparameters".into(),
            detail: "objective not finite at the starting point".into(),
        });
    }
    let mut g = numerical_gradient(f, &x);
    evals += 2 * d;
    // inverse-Hessian approximation
    let mut h_inv: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut trace: Vec<String> = Vec::new();

    for iter in 0..max_iterations {
        let gnorm = inf_norm(&g);
        trace.push(format!("iter {iter}: f = {fx:.8e}, |grad| = {gnorm:.3e}"));
        if gnorm < grad_tol {
            return Ok(OptimResult {
                x,
                f: fx,
                grad_norm: gnorm,
                grad: g,
                iterations: iter,
                evaluations: evals,
            });
        }

        // d = -H g
        let mut dir: Vec<f64> = (0..d)
            .map(|i| -(0..d).map(|j| h_inv[i][j] * g[j]).sum::<f64>())
            .collect();
        let mut descent = dir.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        if !(descent < 0.0) {
            // reset to steepest descent
            dir = g.iter().map(|gi| -gi).collect();
            descent = -g.iter().map(|gi| gi * gi).sum::<f64>();
            for i in 0..d {
                for j in 0..d {
                    h_inv[i][j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }

        // backtracking Armijo
        let mut t = 1.0f64;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..d {
                x_new[i] = x[i] + t * dir[i];
            }
            f_new = f(&x_new);
            evals += 1;
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * descent {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // flat to floating-point resolution: accept convergence if the
            // gradient is already small relative to scale, otherwise fail
            let scale_tol = grad_tol.max(1e-8 * fx.abs().max(1.0));
            if gnorm < scale_tol.max(10.0 * grad_tol) {
                return Ok(OptimResult {
                    x,
                    f: fx,
                    grad_norm: gnorm,
                    grad: g,
                    iterations: iter,
                    evaluations: evals,
                });
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm: gnorm,
                trace: trace.join("\n"),
            });
        }

        let g_new = numerical_gradient(f, &x_new);
        evals += 2 * d;

        // BFGS update
        let s: Vec<f64> = (0..d).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..d).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yy = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * ss * yy {
            let rho = 1.0 / sy;
            // H' = (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let hy: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| h_inv[i][j] * y[j]).sum::<f64>())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    h_inv[i][j] += rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }

        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let gnorm = inf_norm(&g);
    if gnorm < grad_tol {
        return Ok(OptimResult {
            x,
            f: fx,
            grad_norm: gnorm,
            grad: g,
            iterations: max_iterations,
            evaluations: evals,
        });
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        grad_norm: gnorm,
        trace: trace.join("\n"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimizes_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 5.0;
        let r = minimize(&mut f, &[0.0, 0.0], 100, 1e-7).unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(r.x[1], -2.0, epsilon = 1e-5);
        assert!(r.grad_norm < 1e-7);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(&mut f, &[-1.2, 1.0], 500, 1e-6).unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-3);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn reports_non_convergence_with_trace() {
        // gradient never goes to zero inside the iteration budget
        let mut f = |x: &[f64]| x[0].abs() + (1.0 + x[0] * x[0]).sqrt();
        match minimize(&mut f, &[5.0], 3, 1e-12) {
            Err(Error::NonConvergence { trace, .. }) => assert!(trace.contains("iter 0")),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
