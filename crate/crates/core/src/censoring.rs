//! Gamma-frailty censoring model with constant baseline hazard.
//!
//! Censoring is the modeled event here, so the censoring indicator is the
//! complement of the outcome event flag: a member contributes a hazard term
//! when `event == false`. The group marginal likelihood integrates the shared
//! Gamma(mean 1, variance θ_r) frailty in closed form through derivatives of
//! its Laplace transform, and the marginal censoring survival used for IPCW
//! weights is
//!
//! ```text
//! S_C(t | η) = { 1 / (θ_r θ_h t e^η + 1) }^(1/θ_r)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupData, StudyData};
use crate::error::{Error, Result};
use crate::numeric::central_gradient;
use crate::optim::{maximize_with_gradient, Maximum, OptimizerConfig};

/// Step scale for the finite-difference scores `ψ_c`.
pub const SCORE_FD_SCALE: f64 = 1e-6;

/// Parameters `γ = (θ_c, θ_h, θ_r)`: log-hazard-ratio coefficients, constant
/// baseline hazard, and frailty variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringParams {
    pub theta_c: Vec<f64>,
    pub theta_h: f64,
    pub theta_r: f64,
}

impl CensoringParams {
    pub fn new(theta_c: Vec<f64>, theta_h: f64, theta_r: f64) -> Result<Self> {
        let p = CensoringParams { theta_c, theta_h, theta_r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_c.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("hazard-ratio coefficients must be finite".into()));
        }
        if !(self.theta_h > 0.0 && self.theta_h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "baseline hazard must be positive, got {}",
                self.theta_h
            )));
        }
        if !(self.theta_r > 0.0 && self.theta_r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frailty variance must be positive, got {}",
                self.theta_r
            )));
        }
        Ok(())
    }

    /// Total parameter dimension `q + 2`.
    pub fn dim(&self) -> usize {
        self.theta_c.len() + 2
    }

    /// Flatten to `(θ_c..., θ_h, θ_r)` for stacking.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta_c.clone();
        v.push(self.theta_h);
        v.push(self.theta_r);
        v
    }

    pub fn from_vec(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("censoring parameter vector too short".into()));
        }
        CensoringParams::new(
            values[..values.len() - 2].to_vec(),
            values[values.len() - 2],
            values[values.len() - 1],
        )
    }
}

/// Which features form `L̃_ij`. Columns are matched against covariate names;
/// the reserved names `treatment` and `prop_others_treated` derive features
/// from the treatment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CensoringDesign {
    pub columns: Vec<String>,
}

impl CensoringDesign {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Self {
        CensoringDesign { columns: columns.into_iter().map(Into::into).collect() }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Resolve the column names against a study's covariate labels.
    pub fn resolve(&self, covariate_names: &[String]) -> Result<ResolvedDesign> {
        let mut columns = Vec::with_capacity(self.columns.len());
        for name in &self.columns {
            let col = match name.as_str() {
                "treatment" => ResolvedColumn::Treatment,
                "prop_others_treated" => ResolvedColumn::PropOthersTreated,
                other => match covariate_names.iter().position(|c| c == other) {
                    Some(idx) => ResolvedColumn::Covariate(idx),
                    None => {
                        return Err(Error::InvalidData(format!(
                            "censoring design column '{other}' is not a covariate \
                             (available: {covariate_names:?}, plus 'treatment' and \
                             'prop_others_treated')"
                        )))
                    }
                },
            };
            columns.push(col);
        }
        Ok(ResolvedDesign { columns })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ResolvedColumn {
    Covariate(usize),
    Treatment,
    PropOthersTreated,
}

/// A design resolved against concrete covariate indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDesign {
    columns: Vec<ResolvedColumn>,
}

impl ResolvedDesign {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Feature row `L̃_ij` for member `j` of `group`.
    pub fn features(&self, group: &GroupData, j: usize) -> Vec<f64> {
        let member = &group.members[j];
        self.columns
            .iter()
            .map(|col| match col {
                ResolvedColumn::Covariate(idx) => member.covariates[*idx],
                ResolvedColumn::Treatment => f64::from(u8::from(member.treatment)),
                ResolvedColumn::PropOthersTreated => {
                    if group.size() > 1 {
                        group.treated_others(j) as f64 / (group.size() - 1) as f64
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }

    /// Linear predictor `η_ij = L̃_ij' θ_c`.
    pub fn eta(&self, group: &GroupData, j: usize, params: &CensoringParams) -> Result<f64> {
        if self.columns.len() != params.theta_c.len() {
            return Err(Error::InvalidArgument(format!(
                "censoring design has {} columns but theta_c has length {}",
                self.columns.len(),
                params.theta_c.len()
            )));
        }
        Ok(self
            .features(group, j)
            .iter()
            .zip(&params.theta_c)
            .map(|(x, t)| x * t)
            .sum())
    }
}

/// Marginal censoring survival `S_C(t | η)`; equals 1 at `t = 0` and strictly
/// decreases in `t` and `η`.
pub fn censor_survival(t: f64, eta: f64, params: &CensoringParams) -> Result<f64> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("survival time must be >= 0, got {t}")));
    }
    let s = params.theta_h * t * eta.exp();
    Ok((-(params.theta_r * s).ln_1p() / params.theta_r).exp())
}

/// `ln[(−1)^d 𝓛^{(d)}(s)]` for the Gamma(mean 1, variance θ_r) frailty:
/// `Σ_{l<d} ln(1 + l θ_r) − (1/θ_r + d) ln(1 + θ_r s)`.
pub fn log_laplace_deriv_signed(d: usize, s: f64, theta_r: f64) -> Result<f64> {
    if !(theta_r > 0.0 && theta_r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frailty variance must be positive, got {theta_r}"
        )));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Laplace transform argument must be >= 0, got {s}"
        )));
    }
    let mut log = 0.0;
    for l in 0..d {
        log += (l as f64 * theta_r).ln_1p();
    }
    log -= (1.0 / theta_r + d as f64) * (theta_r * s).ln_1p();
    Ok(log)
}

/// `(−1)^d 𝓛^{(d)}(s)`, strictly positive.
pub fn laplace_deriv_signed(d: usize, s: f64, theta_r: f64) -> Result<f64> {
    Ok(log_laplace_deriv_signed(d, s, theta_r)?.exp())
}

fn group_terms(
    group: &GroupData,
    design: &ResolvedDesign,
    params: &CensoringParams,
) -> Result<(f64, f64, usize)> {
    // Returns (Σ_j censored_j · η_j, cumulative hazard argument s, censored count d).
    let mut eta_censored = 0.0;
    let mut s = 0.0;
    let mut d = 0usize;
    for (j, member) in group.members.iter().enumerate() {
        let eta = design.eta(group, j, params)?;
        if !member.event {
            d += 1;
            eta_censored += eta;
        }
        s += params.theta_h * member.observed_time * eta.exp();
    }
    Ok((eta_censored, s, d))
}

/// Group contribution to the frailty censoring log-likelihood:
/// `Σ_j (1-Δ_ij)(ln θ_h + η_ij) + ln[(−1)^{d_i} 𝓛^{(d_i)}(Σ_j θ_h X_ij e^{η_ij})]`
/// with `d_i` the number of censored members.
pub fn group_censor_log_likelihood(
    group: &GroupData,
    design: &ResolvedDesign,
    params: &CensoringParams,
) -> Result<f64> {
    params.validate()?;
    let (eta_censored, s, d) = group_terms(group, design, params)?;
    let ll = d as f64 * params.theta_h.ln() + eta_censored
        + log_laplace_deriv_signed(d, s, params.theta_r)?;
    if !ll.is_finite() {
        return Err(Error::Numerical(format!(
            "censoring likelihood is not finite for group {}",
            group.group_id
        )));
    }
    Ok(ll)
}

/// Log-likelihood and analytic gradient in `(θ_c..., θ_h, θ_r)`; used by the
/// fitter, cross-checked against the finite-difference scores in tests.
fn group_loglik_and_grad(
    group: &GroupData,
    design: &ResolvedDesign,
    params: &CensoringParams,
) -> Result<(f64, Vec<f64>)> {
    let q = params.theta_c.len();
    let th = params.theta_h;
    let tr = params.theta_r;

    let mut eta_censored = 0.0;
    let mut s = 0.0;
    let mut d = 0usize;
    let mut feat_censored = vec![0.0; q];
    let mut s_feat = vec![0.0; q]; // Σ_j θ_h X_j e^{η_j} L̃_jk
    for (j, member) in group.members.iter().enumerate() {
        let feats = design.features(group, j);
        if feats.len() != q {
            return Err(Error::InvalidArgument("censoring design dimension mismatch".into()));
        }
        let eta: f64 = feats.iter().zip(&params.theta_c).map(|(x, t)| x * t).sum();
        let hazard_mass = th * member.observed_time * eta.exp();
        s += hazard_mass;
        for k in 0..q {
            s_feat[k] += hazard_mass * feats[k];
        }
        if !member.event {
            d += 1;
            eta_censored += eta;
            for k in 0..q {
                feat_censored[k] += feats[k];
            }
        }
    }

    let df = d as f64;
    let ll =
        df * th.ln() + eta_censored + log_laplace_deriv_signed(d, s, tr)?;
    if !ll.is_finite() {
        return Err(Error::Numerical(format!(
            "censoring likelihood is not finite for group {}",
            group.group_id
        )));
    }

    // d(log Laplace term)/ds = -(1/θ_r + d) θ_r / (1 + θ_r s)
    let dlap_ds = -(1.0 / tr + df) * tr / (1.0 + tr * s);
    let mut grad = vec![0.0; q + 2];
    for k in 0..q {
        grad[k] = feat_censored[k] + dlap_ds * s_feat[k];
    }
    grad[q] = df / th + dlap_ds * s / th;
    let mut dr = (1.0 / (tr * tr)) * (tr * s).ln_1p() - (1.0 / tr + df) * s / (1.0 + tr * s);
    for l in 0..d {
        dr += l as f64 / (1.0 + l as f64 * tr);
    }
    grad[q + 1] = dr;
    Ok((ll, grad))
}

/// Result of a successful censoring-model fit.
#[derive(Debug, Clone)]
pub struct FittedCensoring {
    pub params: CensoringParams,
    pub converged: bool,
    /// Total log-likelihood at the maximum (sum over groups).
    pub loglik: f64,
    pub iterations: usize,
}

/// Serialized form: `{theta_c, theta_h, theta_r, converged, loglik, columns}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoringJson {
    pub theta_c: Vec<f64>,
    pub theta_h: f64,
    pub theta_r: f64,
    pub converged: bool,
    pub loglik: f64,
    #[serde(default)]
    pub columns: Vec<String>,
}

impl CensoringJson {
    pub fn from_fit(fit: &FittedCensoring, design: &CensoringDesign) -> Self {
        CensoringJson {
            theta_c: fit.params.theta_c.clone(),
            theta_h: fit.params.theta_h,
            theta_r: fit.params.theta_r,
            converged: fit.converged,
            loglik: fit.loglik,
            columns: design.columns.clone(),
        }
    }

    pub fn into_params(self) -> Result<CensoringParams> {
        CensoringParams::new(self.theta_c, self.theta_h, self.theta_r)
    }
}

/// Moment-style starting values: zero coefficients, the exponential-model
/// hazard estimate, and a mid-range frailty variance.
pub fn default_censoring_init(data: &StudyData, design: &CensoringDesign) -> CensoringParams {
    let censored: usize = data
        .groups
        .iter()
        .map(|g| g.members.iter().filter(|m| !m.event).count())
        .sum();
    let total_time: f64 = data
        .groups
        .iter()
        .flat_map(|g| g.members.iter().map(|m| m.observed_time))
        .sum();
    let hazard = if total_time > 0.0 && censored > 0 {
        (censored as f64 / total_time).max(1e-10)
    } else {
        1e-3
    };
    CensoringParams {
        theta_c: vec![0.0; design.dim()],
        theta_h: hazard,
        theta_r: 0.5,
    }
}

/// Maximize the frailty censoring likelihood over `(θ_c, ln θ_h, ln θ_r)`.
/// Requires at least one censored observation; with none the model carries no
/// information about the censoring distribution.
pub fn fit_censoring(
    data: &StudyData,
    design: &CensoringDesign,
    init: &CensoringParams,
    opt: &OptimizerConfig,
) -> Result<FittedCensoring> {
    init.validate()?;
    let resolved = design.resolve(&data.covariate_names)?;
    if init.theta_c.len() != resolved.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial theta_c has length {}, design has {} columns",
            init.theta_c.len(),
            resolved.dim()
        )));
    }
    let any_censored = data.groups.iter().any(|g| g.members.iter().any(|m| !m.event));
    if !any_censored {
        return Err(Error::Unidentifiable(
            "no censored observations; the censoring model is not identifiable".into(),
        ));
    }

    let q = resolved.dim();
    let m = data.num_groups() as f64;
    let eval = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = CensoringParams::new(z[..q].to_vec(), z[q].exp(), z[q + 1].exp())?;
        let per_group: Vec<(f64, Vec<f64>)> = data
            .groups
            .par_iter()
            .map(|g| group_loglik_and_grad(g, &resolved, &params))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut grad = vec![0.0; q + 2];
        for (ll, g) in &per_group {
            total += ll;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        grad[q] *= params.theta_h; // chain rule to the log scale
        grad[q + 1] *= params.theta_r;
        for gi in grad.iter_mut() {
            *gi /= m;
        }
        Ok((total / m, grad))
    };

    let mut z0 = init.theta_c.clone();
    z0.push(init.theta_h.ln());
    z0.push(init.theta_r.ln());
    let max: Maximum = maximize_with_gradient(
        |z| eval(z).map(|(f, _)| f).unwrap_or(f64::NAN),
        |z| eval(z).map(|(_, g)| g).unwrap_or_else(|_| vec![f64::NAN; q + 2]),
        &z0,
        opt,
    )?;

    let params = CensoringParams::new(max.point[..q].to_vec(), max.point[q].exp(), max.point[q + 1].exp())?;
    Ok(FittedCensoring {
        params,
        converged: true,
        loglik: max.objective * m,
        iterations: max.iterations,
    })
}

/// Scores `ψ_c`: central finite differences of the group log-likelihood in
/// `(θ_c..., θ_h, θ_r)`, step `1e-6·max(1,|γ_k|)` with positivity guards.
pub fn censoring_scores_psi(
    group: &GroupData,
    design: &ResolvedDesign,
    params: &CensoringParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let theta = params.to_vec();
    let dim = theta.len();
    let mut positive = vec![false; dim];
    positive[dim - 2] = true;
    positive[dim - 1] = true;
    let grad = central_gradient(
        |t| match CensoringParams::from_vec(t)
            .and_then(|p| group_censor_log_likelihood(group, design, &p))
        {
            Ok(v) => v,
            Err(_) => f64::NAN,
        },
        &theta,
        SCORE_FD_SCALE,
        &positive,
    );
    if grad.iter().any(|g| g.is_nan()) {
        return Err(Error::Numerical(format!(
            "censoring score finite differences failed for group {}",
            group.group_id
        )));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IndividualRecord;
    use approx::assert_relative_eq;

    fn member(id: &str, treated: bool, time: f64, event: bool, covs: &[f64]) -> IndividualRecord {
        IndividualRecord {
            individual_id: id.into(),
            covariates: covs.to_vec(),
            treatment: treated,
            observed_time: time,
            event,
        }
    }

    fn empty_design() -> ResolvedDesign {
        CensoringDesign::new(Vec::<String>::new()).resolve(&[]).unwrap()
    }

    #[test]
    fn survival_hand_values() {
        let p = CensoringParams::new(vec![], 1.0, 1.0).unwrap();
        assert_relative_eq!(censor_survival(1.0, 0.0, &p).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(censor_survival(0.0, 3.7, &p).unwrap(), 1.0);
        // no-frailty limit: exp(-theta_h * t * e^eta)
        let p2 = CensoringParams::new(vec![], 0.015, 1e-8).unwrap();
        assert_relative_eq!(
            censor_survival(100.0, 0.0, &p2).unwrap(),
            0.22313016014842983,
            epsilon = 1e-6
        );
    }

    #[test]
    fn survival_monotonicity() {
        let p = CensoringParams::new(vec![], 0.3, 0.8).unwrap();
        let mut last = 1.0;
        for i in 1..=40 {
            let t = i as f64 * 0.5;
            let v = censor_survival(t, 0.2, &p).unwrap();
            assert!(v < last && v > 0.0);
            last = v;
        }
        // decreasing in eta
        assert!(
            censor_survival(2.0, 1.0, &p).unwrap() < censor_survival(2.0, 0.0, &p).unwrap()
        );
        // for fixed theta_h * t * e^eta, increasing in theta_r
        let lo = CensoringParams::new(vec![], 0.3, 0.4).unwrap();
        let hi = CensoringParams::new(vec![], 0.3, 1.6).unwrap();
        assert!(censor_survival(2.0, 0.5, &hi).unwrap() > censor_survival(2.0, 0.5, &lo).unwrap());
    }

    #[test]
    fn laplace_hand_values() {
        assert_relative_eq!(laplace_deriv_signed(0, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(laplace_deriv_signed(1, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        // frozen from the closed form checked against high-precision
        // differentiation of (1 + θ_r s)^(-1/θ_r)
        assert_relative_eq!(
            laplace_deriv_signed(3, 2.3, 0.7).unwrap(),
            0.058282465638556456,
            max_relative = 1e-12
        );
        assert!(laplace_deriv_signed(2, -0.5, 1.0).is_err());
        assert!(laplace_deriv_signed(2, 0.5, 0.0).is_err());
    }

    #[test]
    fn single_member_censored_likelihood() {
        // one member censored at t=1 with eta=0, theta_h=1, theta_r=1:
        // log theta_h + log[(-1)^1 L'(1)] = 0 + log 0.25
        let g = GroupData {
            group_id: "g".into(),
            members: vec![member("i", false, 1.0, false, &[])],
        };
        let p = CensoringParams::new(vec![], 1.0, 1.0).unwrap();
        let ll = group_censor_log_likelihood(&g, &empty_design(), &p).unwrap();
        assert_relative_eq!(ll, 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn single_member_event_reduces_to_log_survival() {
        let g = GroupData {
            group_id: "g".into(),
            members: vec![member("i", true, 2.5, true, &[])],
        };
        let p = CensoringParams::new(vec![], 0.4, 1.3).unwrap();
        let ll = group_censor_log_likelihood(&g, &empty_design(), &p).unwrap();
        assert_relative_eq!(
            ll,
            censor_survival(2.5, 0.0, &p).unwrap().ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn no_frailty_limit_is_exponential_likelihood() {
        let g = GroupData {
            group_id: "g".into(),
            members: vec![
                member("a", true, 1.2, false, &[]),
                member("b", false, 0.7, true, &[]),
                member("c", true, 2.0, false, &[]),
            ],
        };
        let th = 0.6;
        let p = CensoringParams::new(vec![], th, 1e-8).unwrap();
        let ll = group_censor_log_likelihood(&g, &empty_design(), &p).unwrap();
        let expected: f64 = g
            .members
            .iter()
            .map(|m| {
                let censored = !m.event;
                f64::from(u8::from(censored)) * th.ln() - th * m.observed_time
            })
            .sum();
        assert_relative_eq!(ll, expected, epsilon = 1e-4);
    }

    #[test]
    fn member_permutation_invariance() {
        let design = CensoringDesign::new(vec!["L1", "treatment", "prop_others_treated"]);
        let resolved = design.resolve(&["L1".to_string()]).unwrap();
        let g1 = GroupData {
            group_id: "g".into(),
            members: vec![
                member("a", true, 1.0, false, &[0.5]),
                member("b", false, 2.0, true, &[1.5]),
                member("c", true, 0.5, false, &[2.5]),
            ],
        };
        let mut g2 = g1.clone();
        g2.members.swap(0, 2);
        let p = CensoringParams::new(vec![0.1, -0.2, 0.3], 0.8, 1.1).unwrap();
        assert_relative_eq!(
            group_censor_log_likelihood(&g1, &resolved, &p).unwrap(),
            group_censor_log_likelihood(&g2, &resolved, &p).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn analytic_gradient_matches_fd_scores() {
        let design = CensoringDesign::new(vec!["L1", "prop_others_treated"]);
        let resolved = design.resolve(&["L1".to_string()]).unwrap();
        let g = GroupData {
            group_id: "g".into(),
            members: vec![
                member("a", true, 1.0, false, &[0.5]),
                member("b", false, 2.0, true, &[1.5]),
                member("c", true, 0.5, false, &[2.5]),
            ],
        };
        let p = CensoringParams::new(vec![0.2, -0.1], 0.8, 1.1).unwrap();
        let (_, analytic) = group_loglik_and_grad(&g, &resolved, &p).unwrap();
        let fd = censoring_scores_psi(&g, &resolved, &p).unwrap();
        for (a, f) in analytic.iter().zip(&fd) {
            assert_relative_eq!(a, f, max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn all_events_dataset_rejected() {
        let data = StudyData {
            groups: vec![GroupData {
                group_id: "g".into(),
                members: vec![member("a", true, 1.0, true, &[])],
            }],
            covariate_names: vec![],
        };
        let design = CensoringDesign::new(Vec::<String>::new());
        let init = CensoringParams::new(vec![], 0.1, 0.5).unwrap();
        match fit_censoring(&data, &design, &init, &OptimizerConfig::default()) {
            Err(Error::Unidentifiable(_)) => {}
            other => panic!("expected Unidentifiable, got {other:?}"),
        }
    }

    #[test]
    fn unknown_design_column_rejected() {
        let design = CensoringDesign::new(vec!["nope"]);
        assert!(design.resolve(&["L1".to_string()]).is_err());
    }

    #[test]
    fn prop_others_for_singleton_group_is_zero() {
        let design = CensoringDesign::new(vec!["prop_others_treated"]);
        let resolved = design.resolve(&[]).unwrap();
        let g = GroupData {
            group_id: "g".into(),
            members: vec![member("a", true, 1.0, false, &[])],
        };
        assert_eq!(resolved.features(&g, 0), vec![0.0]);
    }
}
