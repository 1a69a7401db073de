//! Gauss–Hermite quadrature for integrals against a Normal random effect.
//!
//! Nodes and weights are for the physicists' weight `exp(-x^2)`, computed by
//! the Golub–Welsch eigenvalue method on the Jacobi matrix of the Hermite
//! recurrence. An integral against a Normal(0, v) density is then
//!
//! ```text
//! ∫ f(b) φ(b; 0, v) db  ≈  (1/√π) Σ_k w_k f(√(2v) x_k)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for integrating over the propensity model's random intercept.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct QuadratureConfig {
    /// Number of Gauss–Hermite nodes.
    #[serde(default = "default_nodes")]
    pub num_nodes: usize,
}

fn default_nodes() -> usize {
    25
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { num_nodes: default_nodes() }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 5 {
            return Err(Error::InvalidArgument(format!(
                "quadrature needs at least 5 nodes, got {}",
                self.num_nodes
            )));
        }
        Ok(())
    }
}

/// Gauss–Hermite rule: `Σ w_k f(x_k) ≈ ∫ f(x) exp(-x²) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an `n`-point rule. The Jacobi matrix for the Hermite recurrence
    /// has zero diagonal and off-diagonal `sqrt(k/2)`; its eigenvalues are the
    /// nodes and the squared first eigenvector components scale to weights.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature order must be positive".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mu0 = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let q0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], mu0 * q0 * q0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Abscissas for integrating against Normal(0, `variance`): `√(2v) x_k`.
    pub fn normal_points(&self, variance: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let s = (2.0 * variance).sqrt();
        let ln_sqrt_pi = 0.5 * std::f64::consts::PI.ln();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (s * x, w.ln() - ln_sqrt_pi))
    }
}
