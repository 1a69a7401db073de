//! Stacked estimating equations and the empirical sandwich covariance.
//!
//! The stacked parameter is `θ = (γ, β, μ_1..μ_T)`: censoring block,
//! propensity block, and one target value per requested `(t, a, α)`. Each
//! group contributes `ψ_i = (ψ_c, ψ_x, F̂_i(target) − μ_target...)`, and
//!
//! ```text
//! Σ̂ = Û⁻¹ V̂ (Û⁻¹)ᵀ,   Û = m⁻¹ Σ_i(-ψ̇_i),   V̂ = m⁻¹ Σ_i ψ_i ψ_iᵀ
//! ```
//!
//! with the standard error of target `k` equal to `sqrt(Σ̂_kk / m)`. Stacking
//! every target jointly makes contrast covariances (DE/IE/TE/OE) exact.
//!
//! `Û` columns for the nuisance blocks are central finite differences of the
//! group-mean `ψ`; the target-block columns are identity columns, since
//! `ψ_target = F̂_i − μ` is exactly linear in the target values and `ψ_c`,
//! `ψ_x` do not involve them. In known-weights mode the nuisance blocks are
//! dropped entirely: `ψ` reduces to `F̂_i − μ` and `Σ̂` to the i.i.d. sample
//! covariance of the group summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::censoring::{censoring_scores_psi, CensoringParams, ResolvedDesign};
use crate::data::{GroupData, StudyData, TargetSpec};
use crate::error::{Error, Result};
use crate::ipcw::group_targets_given_log_prop;
use crate::numeric::fd_step;
use crate::propensity::{
    log_group_propensity, propensity_scores_psi, PropensityParams, LOG_UNDERFLOW_THRESHOLD,
};
use crate::quadrature::QuadratureConfig;

/// Step control for the numeric Jacobian `ψ̇`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct JacobianConfig {
    /// Central-difference step `h_k = step_scale · max(1, |θ_k|)`.
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
}

fn default_step_scale() -> f64 {
    1e-6
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig { step_scale: default_step_scale() }
    }
}

/// Whether nuisance parameters were estimated (stack their scores) or known
/// (weights fixed; only target components are stacked).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuisanceMode {
    Estimated,
    Known,
}

/// Confidence-interval request: level plus Normal-vs-t choice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CiSpec {
    pub level: f64,
    pub use_t: bool,
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec { level: 0.95, use_t: false }
    }
}

impl CiSpec {
    pub fn t_df(&self, df: usize) -> Option<usize> {
        self.use_t.then_some(df)
    }
}

/// The stacked parameter with its block structure.
#[derive(Debug, Clone)]
pub struct StackedTheta {
    pub gamma: CensoringParams,
    pub beta: PropensityParams,
    pub targets: Vec<(TargetSpec, f64)>,
    pub mode: NuisanceMode,
}

impl StackedTheta {
    /// Stacked dimension: `(q+2) + (p+1) + #targets` when nuisances are
    /// estimated, `#targets` in known-weights mode.
    pub fn dim(&self) -> usize {
        match self.mode {
            NuisanceMode::Estimated => self.gamma.dim() + self.beta.dim() + self.targets.len(),
            NuisanceMode::Known => self.targets.len(),
        }
    }

    /// Index of the first target component.
    pub fn target_offset(&self) -> usize {
        match self.mode {
            NuisanceMode::Estimated => self.gamma.dim() + self.beta.dim(),
            NuisanceMode::Known => 0,
        }
    }
}

/// `ψ(O_i, θ)` for one group: censoring scores, propensity scores, and
/// `F̂_i − μ` per target (nuisance blocks omitted in known-weights mode).
///
/// The group is assumed not to be excluded for propensity underflow; the
/// caller decides exclusions.
pub fn stacked_psi(
    group: &GroupData,
    theta: &StackedTheta,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    let mut psi = Vec::with_capacity(theta.dim());
    if theta.mode == NuisanceMode::Estimated {
        psi.extend(censoring_scores_psi(group, design, &theta.gamma)?);
        psi.extend(propensity_scores_psi(group, &theta.beta, quad)?);
    }
    let log_prop = log_group_propensity(group, &theta.beta, quad)?;
    let specs: Vec<TargetSpec> = theta.targets.iter().map(|(s, _)| *s).collect();
    let values =
        group_targets_given_log_prop(group, log_prop, &specs, &theta.gamma, design)?.values;
    for (v, (_, mu)) in values.iter().zip(&theta.targets) {
        psi.push(v - mu);
    }
    Ok(psi)
}

/// Sandwich output: the stacked covariance with block bookkeeping.
#[derive(Debug, Clone)]
pub struct SandwichOutput {
    /// `Σ̂`, symmetric, of the full stacked dimension.
    pub sigma: DMatrix<f64>,
    pub u_matrix: DMatrix<f64>,
    pub v_matrix: DMatrix<f64>,
    /// Degrees of freedom for t intervals: `m_used − dim`.
    pub df: usize,
    /// Groups actually averaged (exclusions removed).
    pub m_used: usize,
    pub excluded_groups: Vec<String>,
    /// Condition number of `Û` (ratio of extreme singular values).
    pub u_condition: f64,
    /// Point estimates per target, in request order.
    pub estimates: Vec<f64>,
    pub specs: Vec<TargetSpec>,
    /// Index of the first target row in the stack.
    pub target_offset: usize,
}

impl SandwichOutput {
    /// Standard error of target `k`: `sqrt(Σ̂_kk / m)`.
    pub fn target_se(&self, k: usize) -> f64 {
        let i = self.target_offset + k;
        (self.sigma[(i, i)].max(0.0) / self.m_used as f64).sqrt()
    }

    /// Linear contrast over targets: `(w'μ̂, sqrt(w'Σ̂_T w / m))`.
    pub fn contrast(&self, weights: &[f64]) -> Result<(f64, f64)> {
        if weights.len() != self.estimates.len() {
            return Err(Error::InvalidArgument(format!(
                "contrast has {} weights for {} targets",
                weights.len(),
                self.estimates.len()
            )));
        }
        let est: f64 = weights.iter().zip(&self.estimates).map(|(w, e)| w * e).sum();
        let mut var = 0.0;
        for (a, &wa) in weights.iter().enumerate() {
            if wa == 0.0 {
                continue;
            }
            for (b, &wb) in weights.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                var += wa * wb * self.sigma[(self.target_offset + a, self.target_offset + b)];
            }
        }
        let scale = self.sigma.amax();
        if var < -1e-10 * scale.max(1e-300) {
            return Err(Error::Numerical(format!(
                "contrast variance is negative ({var:.3e}) beyond tolerance"
            )));
        }
        Ok((est, (var.max(0.0) / self.m_used as f64).sqrt()))
    }
}

struct Blocks {
    nc: usize,
    np: usize,
    nt: usize,
}

impl Blocks {
    fn dim(&self) -> usize {
        self.nc + self.np + self.nt
    }
}

/// Empirical sandwich covariance for the stacked equations at the fitted
/// parameters, with target values solved internally as group means.
#[allow(clippy::too_many_arguments)]
pub fn sandwich(
    data: &StudyData,
    design: &ResolvedDesign,
    quad: &QuadratureConfig,
    prop: &PropensityParams,
    cens: &CensoringParams,
    targets: &[TargetSpec],
    mode: NuisanceMode,
    jac: &JacobianConfig,
) -> Result<SandwichOutput> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("sandwich needs at least one target".into()));
    }
    for spec in targets {
        spec.validate()?;
    }
    prop.validate()?;
    cens.validate()?;

    // Exclusions and cached log propensities at the fitted beta.
    let mut included: Vec<&GroupData> = Vec::new();
    let mut log_props: Vec<f64> = Vec::new();
    let mut excluded_groups = Vec::new();
    for group in &data.groups {
        let lp = log_group_propensity(group, prop, quad)?;
        if lp < LOG_UNDERFLOW_THRESHOLD {
            excluded_groups.push(group.group_id.clone());
        } else {
            included.push(group);
            log_props.push(lp);
        }
    }
    let m_used = included.len();
    if m_used == 0 {
        return Err(Error::Numerical(
            "every group was excluded for propensity underflow".into(),
        ));
    }
    if !excluded_groups.is_empty() {
        log::warn!(
            "sandwich excluding {} of {} groups for propensity underflow",
            excluded_groups.len(),
            data.num_groups()
        );
    }

    // Group target summaries at the fitted parameters; targets solve to means.
    let nt = targets.len();
    let mut f_values = vec![vec![0.0; nt]; m_used];
    for (i, group) in included.iter().enumerate() {
        f_values[i] =
            group_targets_given_log_prop(group, log_props[i], targets, cens, design)?.values;
    }
    let estimates: Vec<f64> = (0..nt)
        .map(|t| f_values.iter().map(|row| row[t]).sum::<f64>() / m_used as f64)
        .collect();

    let blocks = match mode {
        NuisanceMode::Estimated => Blocks { nc: cens.dim(), np: prop.dim(), nt },
        NuisanceMode::Known => Blocks { nc: 0, np: 0, nt },
    };
    let dim = blocks.dim();
    let mf = m_used as f64;

    // Baseline per-group psi at theta-hat.
    let mut psi = vec![vec![0.0; dim]; m_used];
    for (i, group) in included.iter().enumerate() {
        let row = &mut psi[i];
        if mode == NuisanceMode::Estimated {
            let pc = censoring_scores_psi(group, design, cens)?;
            let px = propensity_scores_psi(group, prop, quad)?;
            row[..blocks.nc].copy_from_slice(&pc);
            row[blocks.nc..blocks.nc + blocks.np].copy_from_slice(&px);
        }
        for t in 0..nt {
            row[blocks.nc + blocks.np + t] = f_values[i][t] - estimates[t];
        }
    }

    let mut v = DMatrix::<f64>::zeros(dim, dim);
    for row in &psi {
        for a in 0..dim {
            for b in a..dim {
                v[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            v[(a, b)] /= mf;
            v[(b, a)] = v[(a, b)];
        }
    }

    // U = -(1/m) Σ ∂ψ/∂θ, column by column.
    let mut u = DMatrix::<f64>::zeros(dim, dim);
    let to = blocks.nc + blocks.np;
    // Target columns are exact: ∂ψ_t/∂μ_s = -δ_ts, nuisance scores free of μ.
    for t in 0..nt {
        u[(to + t, to + t)] = 1.0;
    }

    if mode == NuisanceMode::Estimated {
        let gamma_vec = cens.to_vec();
        let beta_vec = prop.to_vec();

        // Columns for γ: ψ_x does not involve γ (those rows differ by exactly
        // zero), so only ψ_c and the target rows are differenced.
        for j in 0..blocks.nc {
            let positive = j >= blocks.nc - 2;
            let h = fd_step(gamma_vec[j], jac.step_scale, positive);
            let mut col_acc = vec![0.0; dim];
            for side in [1.0f64, -1.0] {
                let mut gv = gamma_vec.clone();
                gv[j] += side * h;
                let cens_pert = CensoringParams::from_vec(&gv)?;
                for (i, group) in included.iter().enumerate() {
                    let pc = censoring_scores_psi(group, design, &cens_pert)?;
                    let ft = group_targets_given_log_prop(
                        group,
                        log_props[i],
                        targets,
                        &cens_pert,
                        design,
                    )?
                    .values;
                    for (a, pcv) in pc.iter().enumerate() {
                        col_acc[a] += side * pcv;
                    }
                    for t in 0..nt {
                        col_acc[to + t] += side * ft[t];
                    }
                }
            }
            for a in 0..dim {
                u[(a, j)] = -col_acc[a] / (2.0 * h * mf);
            }
        }

        // Columns for β: ψ_c does not involve β; the group propensity must be
        // re-integrated at the perturbed β for both ψ_x and the targets.
        for j in 0..blocks.np {
            let positive = j == blocks.np - 1;
            let h = fd_step(beta_vec[j], jac.step_scale, positive);
            let mut col_acc = vec![0.0; dim];
            for side in [1.0f64, -1.0] {
                let mut bv = beta_vec.clone();
                bv[j] += side * h;
                let prop_pert = PropensityParams::from_vec(&bv, prop.compliance)?;
                for group in included.iter() {
                    let px = propensity_scores_psi(group, &prop_pert, quad)?;
                    let lp = log_group_propensity(group, &prop_pert, quad)?;
                    let ft =
                        group_targets_given_log_prop(group, lp, targets, cens, design)?.values;
                    for (a, pxv) in px.iter().enumerate() {
                        col_acc[blocks.nc + a] += side * pxv;
                    }
                    for t in 0..nt {
                        col_acc[to + t] += side * ft[t];
                    }
                }
            }
            for a in 0..dim {
                u[(a, blocks.nc + j)] = -col_acc[a] / (2.0 * h * mf);
            }
        }
    }

    // Invert U by a dense LU solve; fail loudly when singular.
    let svals = u.clone().svd(false, false).singular_values;
    let (s_max, s_min) = (svals.max(), svals.min());
    let u_condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(s_min > s_max * 1e-14) {
        return Err(Error::Numerical(format!(
            "U is singular or near-singular (condition {u_condition:.3e}); \
             a nuisance block is likely collinear"
        )));
    }
    let lu = u.clone().lu();
    let w = lu
        .solve(&v)
        .ok_or_else(|| Error::Numerical("LU solve of U against V failed".into()))?;
    let z = lu
        .solve(&w.transpose())
        .ok_or_else(|| Error::Numerical("LU solve of U against W' failed".into()))?;
    let mut sigma = z.transpose();

    // Symmetrize and verify the diagonal.
    let sigma_t = sigma.transpose();
    sigma = (sigma + sigma_t) * 0.5;
    let scale = sigma.amax();
    for k in 0..dim {
        if sigma[(k, k)] < -1e-10 * scale.max(1e-300) {
            return Err(Error::Numerical(format!(
                "sandwich variance has negative diagonal entry {k}: {:.3e}",
                sigma[(k, k)]
            )));
        }
    }

    Ok(SandwichOutput {
        sigma,
        u_matrix: u,
        v_matrix: v,
        df: m_used.saturating_sub(dim),
        m_used,
        excluded_groups,
        u_condition,
        estimates,
        specs: targets.to_vec(),
        target_offset: to,
    })
}

/// Wald interval `estimate ± q · SE` with the Normal quantile, or the
/// Student-t quantile when `df` is supplied.
pub fn wald_ci(
    estimate: f64,
    std_error: f64,
    level: f64,
    df: Option<usize>,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    if std_error < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "standard error must be nonnegative, got {std_error}"
        )));
    }
    let p = 0.5 + level / 2.0;
    let q = match df {
        Some(df) => {
            if df == 0 {
                return Err(Error::InvalidArgument(
                    "t interval needs positive degrees of freedom".into(),
                ));
            }
            let dist = StudentsT::new(0.0, 1.0, df as f64)
                .map_err(|e| Error::Numerical(format!("t quantile: {e}")))?;
            // The library inverse loses ~1e-4 at very large df; its CDF is
            // accurate, so polish with a few Newton steps.
            let mut q = dist.inverse_cdf(p);
            for _ in 0..4 {
                use statrs::distribution::Continuous;
                let step = (dist.cdf(q) - p) / dist.pdf(q);
                q -= step;
                if step.abs() < 1e-14 * q.abs().max(1.0) {
                    break;
                }
            }
            q
        }
        None => Normal::standard().inverse_cdf(p),
    };
    if std_error == 0.0 {
        return Ok((estimate, estimate));
    }
    Ok((estimate - q * std_error, estimate + q * std_error))
}

/// JSON export of a sandwich result: row-major matrices with a dimension
/// header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichJson {
    pub dim: usize,
    pub m_used: usize,
    pub df: usize,
    pub target_offset: usize,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub u_condition: f64,
    pub excluded_groups: Vec<String>,
}

impl From<&SandwichOutput> for SandwichJson {
    fn from(out: &SandwichOutput) -> Self {
        let flat = |m: &DMatrix<f64>| -> Vec<f64> {
            let n = m.nrows();
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
        };
        SandwichJson {
            dim: out.sigma.nrows(),
            m_used: out.m_used,
            df: out.df,
            target_offset: out.target_offset,
            sigma: flat(&out.sigma),
            u: flat(&out.u_matrix),
            v: flat(&out.v_matrix),
            u_condition: out.u_condition,
            excluded_groups: out.excluded_groups.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wald_ci_normal_quantile() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.95, None).unwrap();
        assert_relative_eq!(lo, -1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(hi, 1.959963984540054, epsilon = 1e-9);
    }

    #[test]
    fn wald_ci_t_approaches_normal() {
        let (lo_n, hi_n) = wald_ci(0.3, 2.0, 0.95, None).unwrap();
        let (lo_t, hi_t) = wald_ci(0.3, 2.0, 0.95, Some(1_000_000)).unwrap();
        assert!((lo_n - lo_t).abs() <= 1e-4);
        assert!((hi_n - hi_t).abs() <= 1e-4);
        // small df is strictly wider
        let (lo_s, hi_s) = wald_ci(0.3, 2.0, 0.95, Some(5)).unwrap();
        assert!(lo_s < lo_n && hi_s > hi_n);
    }

    #[test]
    fn wald_ci_degenerate_and_domain() {
        assert_eq!(wald_ci(1.5, 0.0, 0.95, None).unwrap(), (1.5, 1.5));
        assert!(wald_ci(0.0, 1.0, 1.0, None).is_err());
        assert!(wald_ci(0.0, 1.0, 0.0, None).is_err());
        assert!(wald_ci(0.0, -1.0, 0.5, None).is_err());
        assert!(wald_ci(0.0, 1.0, 0.95, Some(0)).is_err());
    }

    #[test]
    fn ci_spec_df_plumbs_through() {
        let spec = CiSpec { level: 0.95, use_t: true };
        assert_eq!(spec.t_df(17), Some(17));
        let spec = CiSpec { level: 0.95, use_t: false };
        assert_eq!(spec.t_df(17), None);
    }
}
