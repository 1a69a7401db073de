//! Independent numerical oracles for the integration tests: adaptive
//! quadrature and Richardson-extrapolated finite differences. Nothing here
//! touches the library's own Gauss–Hermite or closed-form code paths.

#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

fn simpson_rule(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(fa, flm, fm, a, m);
    let right = simpson_rule(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson_rule(fa, fm, fb, a, b);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `∫_0^∞ f(x) dx` through the substitution `x = e^v`.
pub fn integrate_positive_axis<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    adaptive_simpson(|v: f64| {
        let x = v.exp();
        let y = f(x) * x;
        if y.is_finite() { y } else { 0.0 }
    }, -46.0, 14.0, tol)
}

/// Density of Gamma(shape 1/θr, scale θr), the mean-one frailty law.
pub fn gamma_frailty_pdf(e: f64, theta_r: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    let shape = 1.0 / theta_r;
    ((shape - 1.0) * e.ln() - e / theta_r - shape * theta_r.ln() - ln_gamma(shape)).exp()
}

/// Standard normal density scaled to variance `v`.
pub fn normal_pdf(x: f64, variance: f64) -> f64 {
    (-(x * x) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Richardson-extrapolated central first derivative: base step `h0`, halved
/// `levels` times, eliminating even-order error terms.
pub fn richardson_derivative<F: Fn(f64) -> f64>(f: F, x: f64, h0: f64, levels: usize) -> f64 {
    let mut table = vec![vec![0.0; levels]; levels];
    let mut h = h0;
    for (i, row) in table.iter_mut().enumerate().take(levels) {
        row[0] = (f(x + h) - f(x - h)) / (2.0 * h);
        h /= 2.0;
        let _ = i;
    }
    for j in 1..levels {
        for i in j..levels {
            let factor = 4f64.powi(j as i32);
            table[i][j] = (factor * table[i][j - 1] - table[i - 1][j - 1]) / (factor - 1.0);
        }
    }
    table[levels - 1][levels - 1]
}

fn binom(n: usize, k: usize) -> f64 {
    (ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)).exp()
}

/// Central `d`-th difference quotient with step `h` (half-integer offsets for
/// odd `d`); leading error `O(h²)`.
pub fn central_nth_difference<F: Fn(f64) -> f64>(f: &F, x: f64, d: usize, h: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..=d {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let offset = d as f64 / 2.0 - k as f64;
        acc += sign * binom(d, k) * f(x + offset * h);
    }
    acc / h.powi(d as i32)
}

/// Richardson-extrapolated `d`-th derivative.
pub fn richardson_nth_derivative<F: Fn(f64) -> f64>(
    f: F,
    x: f64,
    d: usize,
    h0: f64,
    levels: usize,
) -> f64 {
    let mut table = vec![vec![0.0; levels]; levels];
    let mut h = h0;
    for i in 0..levels {
        table[i][0] = central_nth_difference(&f, x, d, h);
        h /= 2.0;
    }
    for j in 1..levels {
        for i in j..levels {
            let factor = 4f64.powi(j as i32);
            table[i][j] = (factor * table[i][j - 1] - table[i - 1][j - 1]) / (factor - 1.0);
        }
    }
    table[levels - 1][levels - 1]
}

/// Relative error with a floor guarding division by near-zero references.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

#[cfg(test)]
mod selftest {
    use super::*;

    #[test]
    fn simpson_integrates_polynomial() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12);
        // ∫ x^3 - 2x + 1 over [-1,3] = [x^4/4 - x^2 + x] = (20.25-9+3)-(0.25-1-1)
        assert!((v - (14.25 - (-1.75))).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn positive_axis_integrates_gamma_density() {
        for &tr in &[0.5, 1.25] {
            let v = integrate_positive_axis(|e| gamma_frailty_pdf(e, tr), 1e-12);
            assert!((v - 1.0).abs() < 1e-9, "theta_r={tr}: got {v}");
        }
    }

    #[test]
    fn richardson_derivatives_of_exp() {
        let d1 = richardson_derivative(|x: f64| x.exp(), 0.7, 0.1, 5);
        assert!((d1 - 0.7f64.exp()).abs() / 0.7f64.exp() < 1e-12);
        for d in 1..=4usize {
            let dn = richardson_nth_derivative(|x: f64| x.exp(), 0.3, d, 0.2, 4);
            let want = 0.3f64.exp();
            assert!((dn - want).abs() / want < 1e-8, "d={d}: got {dn}");
        }
    }
}
