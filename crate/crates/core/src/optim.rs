//! Quasi-Newton maximization used by both nuisance-model fitters.
//!
//! BFGS on the inverse Hessian with an Armijo backtracking line search and a
//! central finite-difference gradient. Positivity constraints are handled by
//! the callers through log-reparameterization, so the search space here is
//! unconstrained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::central_gradient;

/// Optimizer contract: relative gradient tolerance and iteration budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    /// Convergence when `‖g‖∞ ≤ grad_tol · max(1, |f|)`.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Scale of the central-difference gradient step.
    #[serde(default = "default_fd_scale")]
    pub fd_scale: f64,
}

fn default_grad_tol() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    500
}
fn default_fd_scale() -> f64 {
    1e-6
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grad_tol: default_grad_tol(),
            max_iterations: default_max_iterations(),
            fd_scale: default_fd_scale(),
        }
    }
}

/// Outcome of a successful maximization.
#[derive(Debug, Clone)]
pub struct Maximum {
    pub point: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximize `f` from `x0` using a central finite-difference gradient.
pub fn maximize<F>(f: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<Maximum>
where
    F: Fn(&[f64]) -> f64,
{
    let positive = vec![false; x0.len()];
    let grad = |x: &[f64]| central_gradient(&f, x, cfg.fd_scale, &positive);
    maximize_with_gradient(&f, grad, x0, cfg)
}

/// Maximize `f` from `x0` with a caller-supplied gradient.
pub fn maximize_with_gradient<F, G>(f: F, grad: G, x0: &[f64], cfg: &OptimizerConfig) -> Result<Maximum>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::InvalidArgument(
            "objective is not finite at the starting point".into(),
        ));
    }
    let mut g = grad(&x);
    let mut trace = vec![fx];
    // Inverse Hessian approximation of the *negated* objective.
    let mut h_inv = identity(dim);

    for iter in 0..cfg.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm <= cfg.grad_tol * fx.abs().max(1.0) {
            return Ok(Maximum { point: x, objective: fx, grad_norm: gnorm, iterations: iter });
        }

        // Ascent direction d = H⁻¹ g (Newton step on -f uses -g; signs fold).
        let mut dir = mat_vec(&h_inv, &g);
        let slope: f64 = dot(&dir, &g);
        if slope <= 0.0 || !slope.is_finite() {
            // Curvature information went bad; restart from steepest ascent.
            h_inv = identity(dim);
            dir = g.clone();
        }
        let slope = dot(&dir, &g);

        // Backtracking Armijo search.
        let mut step = 1.0;
        let mut x_new = Vec::new();
        let mut f_new = f64::NEG_INFINITY;
        let mut ok = false;
        for _ in 0..60 {
            x_new = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            f_new = f(&x_new);
            if f_new.is_finite() && f_new >= fx + 1e-4 * step * slope {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            let gnorm = inf_norm(&g);
            return Err(Error::NoConvergence {
                iterations: iter,
                last_objective: fx,
                grad_norm: gnorm,
                trace,
            });
        }

        let g_new = grad(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // y is the gradient change of the minimized objective, -(g_new - g).
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * inf_norm(&s) * inf_norm(&y) && sy.is_finite() {
            bfgs_update(&mut h_inv, &s, &y, sy);
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
    }

    let gnorm = inf_norm(&g);
    if gnorm <= cfg.grad_tol * fx.abs().max(1.0) {
        return Ok(Maximum {
            point: x,
            objective: fx,
            grad_norm: gnorm,
            iterations: cfg.max_iterations,
        });
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iterations,
        last_objective: fx,
        grad_norm: gnorm,
        trace,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard BFGS inverse-Hessian update:
/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(sᵀy)`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * (1.0 + rho * yhy) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn maximizes_concave_quadratic() {
        // f(x) = -(x0-3)^2 - 2(x1+1)^2
        let f = |x: &[f64]| -(x[0] - 3.0).powi(2) - 2.0 * (x[1] + 1.0).powi(2);
        let m = maximize(f, &[0.0, 0.0], &OptimizerConfig::default()).unwrap();
        assert_relative_eq!(m.point[0], 3.0, epsilon = 1e-5);
        assert_relative_eq!(m.point[1], -1.0, epsilon = 1e-5);
    }

    #[test]
    fn climbs_negative_rosenbrock() {
        let f = |x: &[f64]| {
            -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
        };
        let m = maximize(f, &[-1.2, 1.0], &OptimizerConfig::default()).unwrap();
        assert_relative_eq!(m.point[0], 1.0, epsilon = 1e-3);
        assert_relative_eq!(m.point[1], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn reports_iteration_exhaustion_with_trace() {
        let f = |x: &[f64]| -(x[0] - 3.0).powi(2);
        let cfg = OptimizerConfig { max_iterations: 1, grad_tol: 1e-12, ..Default::default() };
        match maximize(f, &[40.0], &cfg) {
            Err(Error::NoConvergence { trace, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert!(trace.len() >= 2);
                assert!(trace[1] > trace[0]);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_start() {
        let f = |_: &[f64]| f64::NAN;
        assert!(maximize(f, &[0.0], &OptimizerConfig::default()).is_err());
    }
}
