//! Scalar numerics shared across the likelihood and weighting code:
//! stable logistic transforms, log-sum-exp reductions, log binomial
//! coefficients, and central finite differences.

use statrs::function::gamma::ln_gamma;

/// Inverse logit, `1 / (1 + exp(-z))`.
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln expit(z)`, accurate for large |z|.
pub fn log_expit(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `ln Σ exp(x_k)` with the usual max shift; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// `ln C(n, k)` via the log-gamma function.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Central-difference step for coordinate value `x`: `scale * max(1, |x|)`,
/// shrunk when necessary to keep `x - h` strictly positive for
/// positivity-constrained parameters.
pub fn fd_step(x: f64, scale: f64, positive: bool) -> f64 {
    let mut h = scale * x.abs().max(1.0);
    if positive && x - h <= 0.0 {
        h = 0.5 * x;
    }
    h
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Step per coordinate is `scale * max(1, |x_k|)`; coordinates listed in
/// `positive` are kept strictly positive on both sides of the stencil.
pub fn central_gradient<F>(f: F, x: &[f64], scale: f64, positive: &[bool]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = fd_step(x[k], scale, positive.get(k).copied().unwrap_or(false));
        xp[k] = x[k] + h;
        let up = f(&xp);
        xp[k] = x[k] - h;
        let dn = f(&xp);
        xp[k] = x[k];
        grad[k] = (up - dn) / (2.0 * h);
    }
    grad
}
