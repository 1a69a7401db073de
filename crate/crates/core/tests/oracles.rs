//! Numerical-oracle checks: every closed-form or quadrature-based quantity in
//! the library is compared against an independent brute-force computation
//! (adaptive quadrature over the random effect or frailty, Richardson
//! finite differences for derivatives).

mod common;

use common::*;
use ipcw_core::censoring::{
    censoring_scores_psi, group_censor_log_likelihood, laplace_deriv_signed, CensoringDesign,
    CensoringParams,
};
use ipcw_core::data::GroupData;
use ipcw_core::numeric::{central_gradient, expit};
use ipcw_core::propensity::{
    group_log_likelihood, group_propensity, propensity_scores_psi, PropensityParams,
};
use ipcw_core::quadrature::QuadratureConfig;
use ipcw_core::simulation::{simulate_dataset, DgpParams};

fn sim_study(num_groups: usize, group_size: usize, seed: u64) -> ipcw_core::data::StudyData {
    let params = DgpParams { num_groups, group_size, seed, ..Default::default() };
    simulate_dataset(&params).unwrap().data
}

/// Brute-force group propensity: adaptive integration of the member-factor
/// product against the Normal(0, theta_s) density.
fn propensity_by_integration(group: &GroupData, params: &PropensityParams) -> f64 {
    let rho = params.compliance;
    let lps: Vec<f64> = group
        .members
        .iter()
        .map(|m| {
            params.theta_x[0]
                + m.covariates.iter().zip(&params.theta_x[1..]).map(|(c, t)| c * t).sum::<f64>()
        })
        .collect();
    let integrand = |b: f64| -> f64 {
        let mut prod = normal_pdf(b, params.theta_s);
        for (lp, m) in lps.iter().zip(&group.members) {
            let h = rho * expit(lp + b);
            prod *= if m.treatment { h } else { 1.0 - h };
        }
        prod
    };
    let half_width = 12.0 * params.theta_s.sqrt().max(1e-8) + 2.0;
    // two passes: estimate the scale, then integrate to 1e-12 relative
    let rough = adaptive_simpson(&integrand, -half_width, half_width, 1e-10);
    adaptive_simpson(&integrand, -half_width, half_width, rough.abs() * 1e-12)
}

#[test]
fn group_propensity_matches_adaptive_integration() {
    // frozen case first: n=2, A=(1,0), both linear predictors 0, theta_s=1
    let quad = QuadratureConfig::default();
    let study = sim_study(20, 8, 91);

    let mut checked = 0;
    for &(theta_s, rho) in &[(0.0859, 1.0), (1.0, 1.0), (0.4, 2.0 / 3.0)] {
        let params = PropensityParams::new(vec![0.2727, -0.0387, 0.2179], theta_s, rho).unwrap();
        for group in &study.groups {
            let oracle = propensity_by_integration(group, &params);
            let got = group_propensity(group, &params, &quad).unwrap();
            assert!(
                rel_err(got, oracle, 1e-300) <= 1e-6,
                "group {} theta_s={theta_s} rho={rho}: got {got:.12e}, oracle {oracle:.12e}",
                group.group_id
            );
            let log_got = group_log_likelihood(group, &params, &quad).unwrap();
            assert!(rel_err(log_got, oracle.ln(), 1e-12) <= 1e-6);
            checked += 1;
        }
    }
    assert!(checked >= 60);
}

/// Brute-force frailty likelihood: integrate the conditional censoring
/// likelihood against the Gamma(1/θr, θr) density over the positive axis.
fn censor_likelihood_by_integration(
    group: &GroupData,
    etas: &[f64],
    params: &CensoringParams,
) -> f64 {
    let th = params.theta_h;
    let conditional = |e: f64| -> f64 {
        let mut log_lik = 0.0;
        for (m, &eta) in group.members.iter().zip(etas) {
            let rate = th * e * eta.exp();
            if !m.event {
                log_lik += rate.ln();
            }
            log_lik -= rate * m.observed_time;
        }
        log_lik.exp() * gamma_frailty_pdf(e, params.theta_r)
    };
    let rough = integrate_positive_axis(&conditional, 1e-14);
    integrate_positive_axis(&conditional, rough.abs() * 1e-10)
}

#[test]
fn frailty_likelihood_matches_direct_integration() {
    let study = sim_study(15, 5, 37);
    let design = CensoringDesign::new(vec!["L1", "L2"]);
    let resolved = design.resolve(&study.covariate_names).unwrap();
    for &(theta_h, theta_r) in &[(0.015, 1.25), (0.08, 0.7)] {
        let params = CensoringParams::new(vec![0.002, 0.015], theta_h, theta_r).unwrap();
        for group in &study.groups {
            let etas: Vec<f64> = (0..group.size())
                .map(|j| resolved.eta(group, j, &params).unwrap())
                .collect();
            let oracle = censor_likelihood_by_integration(group, &etas, &params);
            let got = group_censor_log_likelihood(group, &resolved, &params).unwrap().exp();
            assert!(
                rel_err(got, oracle, 1e-300) <= 1e-4,
                "group {}: got {got:.10e}, oracle {oracle:.10e}",
                group.group_id
            );
        }
    }
}

fn laplace_closed(d: usize, s: f64, tr: f64) -> f64 {
    laplace_deriv_signed(d, s, tr).unwrap()
}

#[test]
fn laplace_matches_direct_richardson_low_orders() {
    // d-th derivative of (1 + θr s)^(-1/θr) straight from the definition
    for &tr in &[0.7f64, 1.25] {
        for &s in &[0.6f64, 2.3] {
            for d in 0..=4usize {
                let oracle = if d == 0 {
                    (1.0 + tr * s).powf(-1.0 / tr)
                } else {
                    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                    sign * richardson_nth_derivative(
                        |x| (1.0 + tr * x).powf(-1.0 / tr),
                        s,
                        d,
                        0.05,
                        4,
                    )
                };
                let got = laplace_closed(d, s, tr);
                assert!(
                    rel_err(got, oracle, 1e-300) <= 1e-5,
                    "d={d} s={s} tr={tr}: got {got:.10e}, oracle {oracle:.10e}"
                );
            }
        }
    }
    // the spec's pinned point
    let got = laplace_closed(3, 2.3, 0.7);
    let oracle =
        -richardson_nth_derivative(|x| (1.0 + 0.7 * x).powf(-1.0 / 0.7), 2.3, 3, 0.05, 4);
    assert!(rel_err(got, oracle, 1e-300) <= 1e-5);
    assert!(rel_err(got, 0.058282465638556456, 1e-300) <= 1e-10);
}

#[test]
fn laplace_ladder_consistent_to_order_eight() {
    // (-1)^d L^{(d)} differentiated once equals -(-1)^{d+1} L^{(d+1)}:
    // climb the ladder with Richardson first derivatives, anchored at d=0.
    for &tr in &[0.7, 1.25] {
        for &s in &[0.6, 2.3, 5.0] {
            let anchor = laplace_closed(0, s, tr);
            assert!(rel_err(anchor, (1.0 + tr * s).powf(-1.0 / tr), 1e-300) <= 1e-12);
            for d in 0..8usize {
                let deriv = richardson_derivative(|x| laplace_closed(d, x, tr), s, 0.05, 5);
                let got = laplace_closed(d + 1, s, tr);
                assert!(
                    rel_err(got, -deriv, 1e-300) <= 1e-5,
                    "ladder d={} s={s} tr={tr}: got {got:.10e}, -deriv {:.10e}",
                    d + 1,
                    -deriv
                );
            }
        }
    }
}

#[test]
fn laplace_matches_transform_quadrature_to_order_eight() {
    // (-1)^d L^{(d)}(s) = ∫ e^d exp(-e s) f_e(e; θr) de
    for &tr in &[0.7, 1.25] {
        for &s in &[0.6, 2.3] {
            for d in 0..=8usize {
                let oracle = integrate_positive_axis(
                    |e| e.powi(d as i32) * (-e * s).exp() * gamma_frailty_pdf(e, tr),
                    1e-13,
                );
                let got = laplace_closed(d, s, tr);
                assert!(
                    rel_err(got, oracle, 1e-300) <= 1e-6,
                    "d={d} s={s} tr={tr}: got {got:.10e}, oracle {oracle:.10e}"
                );
            }
        }
    }
}

#[test]
fn propensity_scores_match_independent_finite_differences() {
    let study = sim_study(12, 6, 55);
    let quad = QuadratureConfig::default();
    let params = PropensityParams::new(vec![0.25, -0.05, 0.2], 0.09, 1.0).unwrap();
    for group in &study.groups {
        let got = propensity_scores_psi(group, &params, &quad).unwrap();
        // independent differencing path: step 1e-5 instead of 1e-6
        let oracle = central_gradient(
            |t| {
                let p = PropensityParams::new(t[..3].to_vec(), t[3], 1.0).unwrap();
                group_log_likelihood(group, &p, &quad).unwrap()
            },
            &params.to_vec(),
            1e-5,
            &[false, false, false, true],
        );
        for (g, o) in got.iter().zip(&oracle) {
            assert!(
                rel_err(*g, *o, 1e-4) <= 1e-4,
                "group {}: score {g:.8e} vs oracle {o:.8e}",
                group.group_id
            );
        }
    }
}

#[test]
fn censoring_scores_match_independent_finite_differences() {
    let study = sim_study(12, 6, 56);
    let design = CensoringDesign::new(vec!["L1", "L2"]);
    let resolved = design.resolve(&study.covariate_names).unwrap();
    let params = CensoringParams::new(vec![0.002, 0.015], 0.015, 1.25).unwrap();
    for group in &study.groups {
        let got = censoring_scores_psi(group, &resolved, &params).unwrap();
        let oracle = central_gradient(
            |t| {
                let p = CensoringParams::new(t[..2].to_vec(), t[2], t[3]).unwrap();
                group_censor_log_likelihood(group, &resolved, &p).unwrap()
            },
            &params.to_vec(),
            1e-5,
            &[false, false, true, true],
        );
        for (g, o) in got.iter().zip(&oracle) {
            assert!(
                rel_err(*g, *o, 1e-4) <= 1e-4,
                "group {}: score {g:.8e} vs oracle {o:.8e}",
                group.group_id
            );
        }
    }
}
