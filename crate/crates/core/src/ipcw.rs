//! IPCW group summaries, population means, and effect contrasts.
//!
//! The group summary reweights each member's event indicator by the policy
//! probability of the co-members' observed treatments and the inverse of the
//! group propensity times the member's censoring survival:
//!
//! ```text
//! F̂_i(t,a,α) = n_i⁻¹ Σ_j π(A_{i,-j};α) I(A_ij=a) I(Δ_ij=1) I(X_ij≤t)
//!                      / [ Pr(A_i|L_i,β̂) · S_C(X_ij|·,γ̂) ]
//! ```
//!
//! The marginal summary uses `π(A_i;α)` and drops the own-treatment
//! indicator. Population means average group summaries over groups that were
//! not flagged for propensity underflow; exclusions shrink the averaging
//! denominator and are reported.

use serde::{Deserialize, Serialize};

use crate::censoring::{censor_survival, CensoringParams, ResolvedDesign};
use crate::data::{GroupData, StudyData, TargetSpec};
use crate::error::{Error, Result};
use crate::inference;
use crate::inference::{CiSpec, JacobianConfig, NuisanceMode};
use crate::policy::log_policy_prob_counts;
use crate::propensity::{log_group_propensity, PropensityParams, LOG_UNDERFLOW_THRESHOLD};
use crate::quadrature::QuadratureConfig;

/// Censoring-survival values below this are floored, with a warning count.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// A target estimate with its per-group summaries. `estimate` is the mean of
/// `group_values`; groups excluded for propensity underflow are listed.
#[derive(Debug, Clone)]
pub struct TargetEstimate {
    pub spec: TargetSpec,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub group_values: Vec<f64>,
    pub excluded_groups: Vec<String>,
}

/// Per-group values for a batch of targets sharing one group propensity.
#[derive(Debug, Clone)]
pub struct GroupTargets {
    pub values: Vec<f64>,
    /// Members whose censoring survival hit the floor.
    pub floored_weights: usize,
}

/// IPCW values for all `targets` given a precomputed log group propensity.
pub fn group_targets_given_log_prop(
    group: &GroupData,
    log_prop: f64,
    targets: &[TargetSpec],
    cens: &CensoringParams,
    design: &ResolvedDesign,
) -> Result<GroupTargets> {
    let n = group.size();
    let inv_prop = (-log_prop).exp();
    let mut floored = 0usize;

    // Per-member pieces shared by every target.
    let mut weights = Vec::with_capacity(n); // 1 / S_C(X_j | eta_j)
    for (j, member) in group.members.iter().enumerate() {
        if member.event {
            let eta = design.eta(group, j, cens)?;
            let mut sc = censor_survival(member.observed_time, eta, cens)?;
            if sc < WEIGHT_FLOOR {
                sc = WEIGHT_FLOOR;
                floored += 1;
            }
            weights.push(1.0 / sc);
        } else {
            weights.push(0.0); // censored members contribute nothing
        }
    }

    let treated_total = group.treated_count();
    let mut values = Vec::with_capacity(targets.len());
    for spec in targets {
        let mut sum = 0.0;
        for (j, member) in group.members.iter().enumerate() {
            if !member.event || member.observed_time > spec.time_horizon {
                continue;
            }
            let pi = match spec.own_treatment {
                Some(a) => {
                    if member.treatment != a {
                        continue;
                    }
                    log_policy_prob_counts(group.treated_others(j), n - 1, spec.alpha)?.exp()
                }
                None => log_policy_prob_counts(treated_total, n, spec.alpha)?.exp(),
            };
            sum += pi * weights[j] * inv_prop;
        }
        values.push(sum / n as f64);
    }
    Ok(GroupTargets { values, floored_weights: floored })
}

/// IPCW values for `targets`; `None` when the group propensity underflows the
/// `1e-300` guard and the group must be excluded.
pub fn group_ipcw_targets(
    group: &GroupData,
    targets: &[TargetSpec],
    prop: &PropensityParams,
    cens: &CensoringParams,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
) -> Result<Option<GroupTargets>> {
    let log_prop = log_group_propensity(group, prop, quad)?;
    if log_prop < LOG_UNDERFLOW_THRESHOLD {
        return Ok(None);
    }
    group_targets_given_log_prop(group, log_prop, targets, cens, design).map(Some)
}

/// `F̂_i(t,a,α)` or `F̂_i(t,α)` for a single target (`None` = excluded group).
pub fn group_ipcw_value(
    group: &GroupData,
    spec: &TargetSpec,
    prop: &PropensityParams,
    cens: &CensoringParams,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
) -> Result<Option<f64>> {
    spec.validate()?;
    Ok(group_ipcw_targets(group, std::slice::from_ref(spec), prop, cens, design, quad)?
        .map(|g| g.values[0]))
}

/// Uncensored group summary `F̂^TV_i` with `Y_ij = I(X_ij ≤ t)`: no event
/// indicator and no censoring weight.
pub fn group_tv_value_given_log_prop(
    group: &GroupData,
    log_prop: f64,
    spec: &TargetSpec,
) -> Result<f64> {
    let n = group.size();
    let inv_prop = (-log_prop).exp();
    let treated_total = group.treated_count();
    let mut sum = 0.0;
    for (j, member) in group.members.iter().enumerate() {
        if member.observed_time > spec.time_horizon {
            continue;
        }
        let pi = match spec.own_treatment {
            Some(a) => {
                if member.treatment != a {
                    continue;
                }
                log_policy_prob_counts(group.treated_others(j), n - 1, spec.alpha)?.exp()
            }
            None => log_policy_prob_counts(treated_total, n, spec.alpha)?.exp(),
        };
        sum += pi * inv_prop;
    }
    Ok(sum / n as f64)
}

fn mean_over_included(
    data: &StudyData,
    per_group: Vec<Option<f64>>,
) -> Result<(f64, Vec<f64>, Vec<String>)> {
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for (group, v) in data.groups.iter().zip(per_group) {
        match v {
            Some(x) => values.push(x),
            None => excluded.push(group.group_id.clone()),
        }
    }
    if values.is_empty() {
        return Err(Error::Numerical(
            "every group was excluded for propensity underflow; nothing to average".into(),
        ));
    }
    if !excluded.is_empty() {
        log::warn!(
            "excluded {} of {} groups with group propensity below 1e-300",
            excluded.len(),
            data.num_groups()
        );
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean, values, excluded))
}

/// `μ̂(t,a,α)` or `μ̂(t,α)`: the mean of group summaries over non-excluded
/// groups. The standard error is left empty; the sandwich fills it.
pub fn estimate_mu(
    data: &StudyData,
    spec: &TargetSpec,
    prop: &PropensityParams,
    cens: &CensoringParams,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
) -> Result<TargetEstimate> {
    spec.validate()?;
    let mut total_floored = 0usize;
    let per_group: Vec<Option<f64>> = data
        .groups
        .iter()
        .map(|g| {
            group_ipcw_targets(g, std::slice::from_ref(spec), prop, cens, design, quad).map(|o| {
                o.map(|gt| {
                    total_floored += gt.floored_weights;
                    gt.values[0]
                })
            })
        })
        .collect::<Result<_>>()?;
    if total_floored > 0 {
        log::warn!("{total_floored} censoring weights fell below {WEIGHT_FLOOR:e} and were floored");
    }
    let (estimate, group_values, excluded_groups) = mean_over_included(data, per_group)?;
    Ok(TargetEstimate { spec: *spec, estimate, std_error: None, group_values, excluded_groups })
}

/// The uncensored estimator `μ̂^TV`; coincides with [`estimate_mu`] when no
/// observation is censored and `S_C ≡ 1`.
pub fn tv_estimator(
    data: &StudyData,
    spec: &TargetSpec,
    prop: &PropensityParams,
    quad: &QuadratureConfig,
) -> Result<TargetEstimate> {
    spec.validate()?;
    let per_group: Vec<Option<f64>> = data
        .groups
        .iter()
        .map(|g| {
            let log_prop = log_group_propensity(g, prop, quad)?;
            if log_prop < LOG_UNDERFLOW_THRESHOLD {
                return Ok(None);
            }
            group_tv_value_given_log_prop(g, log_prop, spec).map(Some)
        })
        .collect::<Result<_>>()?;
    let (estimate, group_values, excluded_groups) = mean_over_included(data, per_group)?;
    Ok(TargetEstimate { spec: *spec, estimate, std_error: None, group_values, excluded_groups })
}

/// Kinds of policy contrasts reported in the effect table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectKind {
    /// `μ(t,0,α) − μ(t,1,α)`
    Direct,
    /// `μ(t,0,α₁) − μ(t,0,α₂)`
    Indirect,
    /// `μ(t,0,α₁) − μ(t,1,α₂)`
    Total,
    /// `μ(t,α₁) − μ(t,α₂)`
    Overall,
}

impl EffectKind {
    pub fn label(&self) -> &'static str {
        match self {
            EffectKind::Direct => "DE",
            EffectKind::Indirect => "IE",
            EffectKind::Total => "TE",
            EffectKind::Overall => "OE",
        }
    }
}

/// One row of the effect table.
#[derive(Debug, Clone)]
pub struct EffectRow {
    pub kind: EffectKind,
    pub time: f64,
    pub alpha_1: f64,
    /// Absent for the direct effect (a single-policy contrast).
    pub alpha_2: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Effect contrasts with a common reporting scale (1 or e.g. 1000).
#[derive(Debug, Clone)]
pub struct EffectTable {
    pub rows: Vec<EffectRow>,
    pub scale: f64,
}

impl EffectTable {
    /// CSV schema: `effect,t,alpha1,alpha2,estimate,se,ci_low,ci_high,scale`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        use crate::data::fmt_g17;
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["effect", "t", "alpha1", "alpha2", "estimate", "se", "ci_low", "ci_high", "scale"])?;
        for row in &self.rows {
            wtr.write_record([
                row.kind.label().to_string(),
                fmt_g17(row.time),
                fmt_g17(row.alpha_1),
                row.alpha_2.map(fmt_g17).unwrap_or_default(),
                fmt_g17(row.estimate * self.scale),
                fmt_g17(row.std_error * self.scale),
                fmt_g17(row.ci_low * self.scale),
                fmt_g17(row.ci_high * self.scale),
                format!("{}", self.scale),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One row of the per-target mean table.
#[derive(Debug, Clone)]
pub struct MuRow {
    pub spec: TargetSpec,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Joint estimates for a time grid: all targets plus the four effect kinds
/// against the reference policy.
#[derive(Debug, Clone)]
pub struct EffectEstimates {
    pub mu: Vec<MuRow>,
    pub effects: EffectTable,
    pub excluded_groups: Vec<String>,
}

/// Estimate `μ(t,a,α)`, `μ(t,α)` and the DE/IE/TE/OE contrasts over an alpha
/// grid, with sandwich standard errors from one joint stack per time point so
/// contrast covariances are exact.
#[allow(clippy::too_many_arguments)]
pub fn estimate_effects(
    data: &StudyData,
    times: &[f64],
    alpha_grid: &[f64],
    reference_alpha: f64,
    prop: &PropensityParams,
    cens: &CensoringParams,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
    jac: &JacobianConfig,
    ci: &CiSpec,
) -> Result<EffectEstimates> {
    if alpha_grid.is_empty() || times.is_empty() {
        return Err(Error::InvalidArgument("empty time or alpha grid".into()));
    }
    let mut alphas: Vec<f64> = alpha_grid.to_vec();
    if !alphas.iter().any(|a| a == &reference_alpha) {
        alphas.push(reference_alpha);
    }

    let mut mu = Vec::new();
    let mut rows = Vec::new();
    let mut excluded: Vec<String> = Vec::new();
    for &t in times {
        // Joint target stack at this time point: (a=0, a=1, marginal) x alphas.
        let mut targets = Vec::with_capacity(3 * alphas.len());
        for &alpha in &alphas {
            targets.push(TargetSpec::new(t, Some(false), alpha)?);
            targets.push(TargetSpec::new(t, Some(true), alpha)?);
            targets.push(TargetSpec::new(t, None, alpha)?);
        }
        let fit = inference::sandwich(
            data,
            design,
            quad,
            prop,
            cens,
            &targets,
            NuisanceMode::Estimated,
            jac,
        )?;
        excluded = fit.excluded_groups.clone();

        let index = |own: Option<bool>, alpha: f64| -> usize {
            let ai = alphas.iter().position(|&a| a == alpha).expect("alpha in grid");
            3 * ai
                + match own {
                    Some(false) => 0,
                    Some(true) => 1,
                    None => 2,
                }
        };

        for (k, spec) in targets.iter().enumerate() {
            let mut w = vec![0.0; targets.len()];
            w[k] = 1.0;
            let (est, se) = fit.contrast(&w)?;
            let (lo, hi) = inference::wald_ci(est, se, ci.level, ci.t_df(fit.df))?;
            mu.push(MuRow { spec: *spec, estimate: est, std_error: se, ci_low: lo, ci_high: hi });
        }

        let mut push_effect = |kind: EffectKind, a1: f64, a2: Option<f64>, plus: usize, minus: usize| -> Result<()> {
            let mut w = vec![0.0; targets.len()];
            w[plus] += 1.0;
            w[minus] -= 1.0;
            let (est, se) = fit.contrast(&w)?;
            let (lo, hi) = inference::wald_ci(est, se, ci.level, ci.t_df(fit.df))?;
            rows.push(EffectRow {
                kind,
                time: t,
                alpha_1: a1,
                alpha_2: a2,
                estimate: est,
                std_error: se,
                ci_low: lo,
                ci_high: hi,
            });
            Ok(())
        };

        for &alpha in alpha_grid {
            push_effect(
                EffectKind::Direct,
                alpha,
                None,
                index(Some(false), alpha),
                index(Some(true), alpha),
            )?;
            push_effect(
                EffectKind::Indirect,
                alpha,
                Some(reference_alpha),
                index(Some(false), alpha),
                index(Some(false), reference_alpha),
            )?;
            push_effect(
                EffectKind::Total,
                alpha,
                Some(reference_alpha),
                index(Some(false), alpha),
                index(Some(true), reference_alpha),
            )?;
            push_effect(
                EffectKind::Overall,
                alpha,
                Some(reference_alpha),
                index(None, alpha),
                index(None, reference_alpha),
            )?;
        }
    }
    Ok(EffectEstimates { mu, effects: EffectTable { rows, scale: 1.0 }, excluded_groups: excluded })
}
