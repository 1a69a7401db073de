//! Random-intercept logistic treatment model and group propensity scores.
//!
//! An individual's treatment probability given the group random effect `b` is
//! `ρ · expit(x'θ_x + b)` where `x = (1, covariates...)` and `ρ` is a known
//! compliance multiplier (1 for the standard model; 2/3 when treated
//! individuals must additionally be randomized to active arms). The group
//! propensity integrates the product of member factors over
//! `b ~ Normal(0, θ_s)` by Gauss–Hermite quadrature, entirely in log space.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupData, StudyData};
use crate::error::{Error, Result};
use crate::numeric::{central_gradient, expit, log_expit, log_sum_exp};
use crate::optim::{maximize_with_gradient, OptimizerConfig};
use crate::quadrature::{GaussHermite, QuadratureConfig};

/// Group propensities with log below this are flagged and excluded from
/// estimation (log-space underflow guard at 1e-300).
pub const LOG_UNDERFLOW_THRESHOLD: f64 = -690.77552789821368;

/// Step scale for the finite-difference scores `ψ_x`.
pub const SCORE_FD_SCALE: f64 = 1e-6;

/// Parameters of the treatment model: fixed effects (intercept first),
/// random-intercept variance, and the known compliance multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityParams {
    pub theta_x: Vec<f64>,
    pub theta_s: f64,
    pub compliance: f64,
}

impl PropensityParams {
    pub fn new(theta_x: Vec<f64>, theta_s: f64, compliance: f64) -> Result<Self> {
        let p = PropensityParams { theta_x, theta_s, compliance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_x.is_empty() || self.theta_x.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "fixed-effect coefficients must be nonempty and finite".into(),
            ));
        }
        if !(self.theta_s > 0.0 && self.theta_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "random-intercept variance must be positive, got {}",
                self.theta_s
            )));
        }
        if !(self.compliance > 0.0 && self.compliance <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "compliance multiplier must lie in (0,1], got {}",
                self.compliance
            )));
        }
        Ok(())
    }

    /// Number of fixed-effect coefficients, intercept included.
    pub fn dim_fixed(&self) -> usize {
        self.theta_x.len()
    }

    /// Total parameter dimension `p + 1`.
    pub fn dim(&self) -> usize {
        self.theta_x.len() + 1
    }

    /// Flatten to `(θ_x..., θ_s)` for stacking.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta_x.clone();
        v.push(self.theta_s);
        v
    }

    pub fn from_vec(values: &[f64], compliance: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("propensity parameter vector too short".into()));
        }
        PropensityParams::new(
            values[..values.len() - 1].to_vec(),
            values[values.len() - 1],
            compliance,
        )
    }

    /// Linear predictor `x'θ_x` for a record's covariates, with the intercept
    /// column supplied implicitly.
    fn linear_predictor(&self, covariates: &[f64]) -> Result<f64> {
        if covariates.len() + 1 != self.theta_x.len() {
            return Err(Error::InvalidArgument(format!(
                "record has {} covariates but the model has {} coefficients (incl. intercept)",
                covariates.len(),
                self.theta_x.len()
            )));
        }
        Ok(self.theta_x[0]
            + covariates.iter().zip(&self.theta_x[1..]).map(|(c, t)| c * t).sum::<f64>())
    }
}

fn hermite_rule(num_nodes: usize) -> Result<Arc<GaussHermite>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    if let Some(rule) = map.get(&num_nodes) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(GaussHermite::new(num_nodes)?);
    map.insert(num_nodes, rule.clone());
    Ok(rule)
}

/// `Pr(A = 1 | design_row, b) = ρ · expit(design_row'θ_x + b)`.
///
/// `design_row` multiplies `θ_x` directly, so it must have length `p` and
/// carry its own intercept column.
pub fn individual_prob(design_row: &[f64], b: f64, params: &PropensityParams) -> Result<f64> {
    params.validate()?;
    if design_row.len() != params.theta_x.len() {
        return Err(Error::InvalidArgument(format!(
            "design row has length {}, expected {}",
            design_row.len(),
            params.theta_x.len()
        )));
    }
    let z: f64 = design_row.iter().zip(&params.theta_x).map(|(x, t)| x * t).sum::<f64>() + b;
    Ok(params.compliance * expit(z))
}

/// Log of a member's likelihood factor at random effect `b`:
/// `ln(ρh)` if treated, `ln(1-ρh)` otherwise.
fn log_member_factor(lp: f64, b: f64, treated: bool, rho: f64) -> f64 {
    let z = lp + b;
    if treated {
        rho.ln() + log_expit(z)
    } else if rho == 1.0 {
        log_expit(-z)
    } else {
        (-rho * expit(z)).ln_1p()
    }
}

/// `ln Pr(a | L_i, β)` for an arbitrary treatment vector `a` over the
/// group's members. Always finite for valid parameters.
pub fn log_group_propensity_for(
    group: &GroupData,
    treatments: &[bool],
    params: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    params.validate()?;
    quad.validate()?;
    if treatments.len() != group.size() {
        return Err(Error::InvalidArgument(format!(
            "treatment vector length {} does not match group size {}",
            treatments.len(),
            group.size()
        )));
    }
    let rule = hermite_rule(quad.num_nodes)?;
    let lps: Vec<f64> = group
        .members
        .iter()
        .map(|m| params.linear_predictor(&m.covariates))
        .collect::<Result<_>>()?;
    let rho = params.compliance;
    let terms: Vec<f64> = rule
        .normal_points(params.theta_s)
        .map(|(b, log_w)| {
            let s: f64 = lps
                .iter()
                .zip(treatments)
                .map(|(&lp, &a)| log_member_factor(lp, b, a, rho))
                .sum();
            log_w + s
        })
        .collect();
    let ll = log_sum_exp(&terms);
    if ll.is_nan() {
        return Err(Error::Numerical(format!(
            "group propensity is NaN for group {} (theta_s = {})",
            group.group_id, params.theta_s
        )));
    }
    Ok(ll)
}

/// `ln Pr(A_i | L_i, β)` at the observed treatment vector.
pub fn log_group_propensity(
    group: &GroupData,
    params: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let treatments: Vec<bool> = group.members.iter().map(|m| m.treatment).collect();
    log_group_propensity_for(group, &treatments, params, quad)
}

/// `Pr(A_i | L_i, β)` as a probability. Errors if quadrature underflows to a
/// nonpositive value; use [`log_group_propensity`] where extreme groups are
/// expected.
pub fn group_propensity(
    group: &GroupData,
    params: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let ll = log_group_propensity(group, params, quad)?;
    let p = ll.exp();
    if !(p > 0.0) {
        return Err(Error::Numerical(format!(
            "group propensity underflowed to {p} for group {} (log propensity {ll:.1})",
            group.group_id
        )));
    }
    Ok(p)
}

/// Group contribution to the model log-likelihood (equals the log group
/// propensity at the observed treatments).
pub fn group_log_likelihood(
    group: &GroupData,
    params: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    log_group_propensity(group, params, quad)
}

/// Log-likelihood and its analytic gradient in `(θ_x..., θ_s)`, differentiating
/// through the fixed quadrature rule. Used by the fitter; the sandwich scores
/// deliberately use finite differences instead (see [`propensity_scores_psi`]).
fn group_loglik_and_grad(
    group: &GroupData,
    params: &PropensityParams,
    rule: &GaussHermite,
) -> Result<(f64, Vec<f64>)> {
    let lps: Vec<f64> = group
        .members
        .iter()
        .map(|m| params.linear_predictor(&m.covariates))
        .collect::<Result<_>>()?;
    let rho = params.compliance;
    let p = params.theta_x.len();

    let points: Vec<(f64, f64)> = rule.normal_points(params.theta_s).collect();
    let mut node_logs = Vec::with_capacity(points.len());
    // d/dz of each member's log factor, per node.
    let mut node_dz: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for &(b, log_w) in &points {
        let mut s = log_w;
        let mut dz = Vec::with_capacity(lps.len());
        for (&lp, m) in lps.iter().zip(&group.members) {
            let z = lp + b;
            if m.treatment {
                s += rho.ln() + log_expit(z);
                dz.push(expit(-z));
            } else {
                let h = expit(z);
                if rho == 1.0 {
                    s += log_expit(-z);
                    dz.push(-h);
                } else {
                    let one_minus = (-rho * h).ln_1p();
                    s += one_minus;
                    dz.push(-rho * h * (1.0 - h) / (1.0 - rho * h));
                }
            }
        }
        node_logs.push(s);
        node_dz.push(dz);
    }
    let ll = log_sum_exp(&node_logs);
    if ll.is_nan() {
        return Err(Error::Numerical(format!(
            "propensity likelihood is NaN for group {}",
            group.group_id
        )));
    }

    let mut grad = vec![0.0; p + 1];
    for (k, &(b, _)) in points.iter().enumerate() {
        let weight = (node_logs[k] - ll).exp();
        if weight == 0.0 {
            continue;
        }
        let dz = &node_dz[k];
        let dz_sum: f64 = dz.iter().sum();
        grad[0] += weight * dz_sum;
        for (j, m) in group.members.iter().enumerate() {
            for (c, x) in m.covariates.iter().enumerate() {
                grad[1 + c] += weight * dz[j] * x;
            }
        }
        // ∂b_k/∂θ_s = b_k / (2 θ_s)
        grad[p] += weight * dz_sum * b / (2.0 * params.theta_s);
    }
    Ok((ll, grad))
}

/// Result of a successful maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FittedPropensity {
    pub params: PropensityParams,
    pub converged: bool,
    /// Total log-likelihood at the maximum (sum over groups).
    pub loglik: f64,
    pub iterations: usize,
}

/// Serialized form: `{theta_x, theta_s, compliance, converged, loglik}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityJson {
    pub theta_x: Vec<f64>,
    pub theta_s: f64,
    pub compliance: f64,
    pub converged: bool,
    pub loglik: f64,
}

impl From<&FittedPropensity> for PropensityJson {
    fn from(fit: &FittedPropensity) -> Self {
        PropensityJson {
            theta_x: fit.params.theta_x.clone(),
            theta_s: fit.params.theta_s,
            compliance: fit.params.compliance,
            converged: fit.converged,
            loglik: fit.loglik,
        }
    }
}

impl PropensityJson {
    pub fn into_params(self) -> Result<PropensityParams> {
        PropensityParams::new(self.theta_x, self.theta_s, self.compliance)
    }
}

/// Maximize the marginal likelihood over `(θ_x, ln θ_s)`; the compliance
/// multiplier is known and held fixed. Requires at least two groups and both
/// treatment values somewhere in the data.
pub fn fit_propensity(
    data: &StudyData,
    init: &PropensityParams,
    quad: &QuadratureConfig,
    opt: &OptimizerConfig,
) -> Result<FittedPropensity> {
    init.validate()?;
    quad.validate()?;
    if data.num_groups() < 2 {
        return Err(Error::InvalidArgument(
            "propensity fitting needs at least two groups".into(),
        ));
    }
    let any_treated = data.groups.iter().any(|g| g.members.iter().any(|m| m.treatment));
    let any_untreated = data.groups.iter().any(|g| g.members.iter().any(|m| !m.treatment));
    if !any_treated || !any_untreated {
        return Err(Error::Unidentifiable(
            "all treatment indicators are equal; the propensity model is separated".into(),
        ));
    }
    let expected = data.covariate_names.len() + 1;
    if init.theta_x.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "initial theta_x has length {}, expected {} (intercept + covariates)",
            init.theta_x.len(),
            expected
        )));
    }

    let rule = hermite_rule(quad.num_nodes)?;
    let m = data.num_groups() as f64;
    let rho = init.compliance;
    let p = init.theta_x.len();

    // z = (theta_x..., ln theta_s); objective is the mean log-likelihood.
    let eval = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = PropensityParams::new(z[..p].to_vec(), z[p].exp(), rho)?;
        let per_group: Vec<(f64, Vec<f64>)> = data
            .groups
            .par_iter()
            .map(|g| group_loglik_and_grad(g, &params, &rule))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut grad = vec![0.0; p + 1];
        for (ll, g) in &per_group {
            total += ll;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        // chain rule to ln theta_s, and scale to means
        grad[p] *= params.theta_s;
        for gi in grad.iter_mut() {
            *gi /= m;
        }
        Ok((total / m, grad))
    };

    let mut z0 = init.theta_x.clone();
    z0.push(init.theta_s.ln());
    let max = maximize_with_gradient(
        |z| eval(z).map(|(f, _)| f).unwrap_or(f64::NAN),
        |z| eval(z).map(|(_, g)| g).unwrap_or_else(|_| vec![f64::NAN; p + 1]),
        &z0,
        opt,
    )?;

    let params = PropensityParams::new(max.point[..p].to_vec(), max.point[p].exp(), rho)?;
    for (k, t) in params.theta_x.iter().enumerate() {
        if t.abs() > 15.0 {
            log::warn!(
                "propensity coefficient {k} is {t:.2}; possible separation in the treatment model"
            );
        }
    }
    Ok(FittedPropensity {
        params,
        converged: true,
        loglik: max.objective * m,
        iterations: max.iterations,
    })
}

/// Scores `ψ_x`: the gradient of the group log-likelihood in `(θ_x..., θ_s)`,
/// by central finite differences with step `1e-6·max(1,|β_k|)` (shrunk to keep
/// `θ_s` positive). Shares the differentiation path used by the sandwich.
pub fn propensity_scores_psi(
    group: &GroupData,
    params: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    params.validate()?;
    let theta = params.to_vec();
    let dim = theta.len();
    let mut positive = vec![false; dim];
    positive[dim - 1] = true;
    let mut failure: Option<Error> = None;
    let grad = central_gradient(
        |t| match PropensityParams::from_vec(t, params.compliance)
            .and_then(|p| group_log_likelihood(group, &p, quad))
        {
            Ok(v) => v,
            Err(_) => f64::NAN,
        },
        &theta,
        SCORE_FD_SCALE,
        &positive,
    );
    if grad.iter().any(|g| g.is_nan()) {
        failure = Some(Error::Numerical(format!(
            "propensity score finite differences failed for group {}",
            group.group_id
        )));
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}
