//! Data-generating process, potential-outcome bookkeeping, the brute-force
//! counterfactual truth oracle, and the Monte Carlo replication harness.
//!
//! Groups are generated independently. Within a group the draw order is
//! fixed: group-level noise `r1`, treatment random intercept `b`, censoring
//! frailty `e`, then per member `V`, `r2`, `log L2` noise, the treatment
//! uniform, the potential-outcome uniform, and the censoring uniform. Each
//! replicate runs on its own counter-based RNG stream, so replication results
//! do not depend on execution order.
//!
//! Potential event times for every (own treatment, treated-others) pair reuse
//! one uniform per member, inverted through the exponential quantile at that
//! pair's mean. The marginal law of each potential time is unchanged by this
//! coupling, so truth values are unaffected, and the factual outcome is the
//! table entry at the realized treatments by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{CensoringDesign, CensoringParams, default_censoring_init, fit_censoring};
use crate::data::{fmt_g17, GroupData, IndividualRecord, StudyData, TargetSpec};
use crate::error::{Error, Result};
use crate::inference::{sandwich, wald_ci, JacobianConfig, NuisanceMode};
use crate::numeric::ln_choose;
use crate::optim::OptimizerConfig;
use crate::propensity::{fit_propensity, PropensityParams};
use crate::quadrature::QuadratureConfig;

/// All constants of the data-generating process. Defaults reproduce the
/// cholera-style study: two covariates (age in decades, distance to river),
/// a random-intercept logistic treatment model, exponential outcome times
/// with a within-group spillover term, and gamma-frailty exponential
/// censoring.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DgpParams {
    pub num_groups: usize,
    pub group_size: usize,
    pub seed: u64,

    /// Mean of the exponential age component `V`.
    pub covariate_exp_mean: f64,
    /// Cap applied to `V + r1 + r2` before scaling.
    pub covariate_cap: f64,
    /// Scale divisor producing age in decades.
    pub covariate_scale: f64,
    /// Variance of the group-level covariate noise `r1`.
    pub group_noise_var: f64,
    /// Variance of the individual covariate noise `r2`.
    pub individual_noise_var: f64,
    /// Variance of `log L2` around `r1 + r2`.
    pub log_l2_var: f64,

    pub treat_intercept: f64,
    pub treat_coef_l1: f64,
    pub treat_coef_l2: f64,
    /// Variance of the treatment model's random intercept.
    pub treat_random_var: f64,

    /// Intercept of the exponential outcome mean.
    pub outcome_base: f64,
    /// Added to the mean when the individual is treated.
    pub outcome_treat: f64,
    pub outcome_l1: f64,
    pub outcome_l2: f64,
    /// Coefficient on the proportion of treated others.
    pub outcome_spillover: f64,

    /// Variance of the gamma censoring frailty (mean 1).
    pub censor_frailty_var: f64,
    /// Baseline censoring hazard.
    pub censor_hazard: f64,
    pub censor_l1: f64,
    pub censor_l2: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            num_groups: 500,
            group_size: 10,
            seed: 20260809,
            covariate_exp_mean: 20.0,
            covariate_cap: 100.0,
            covariate_scale: 10.0,
            group_noise_var: 0.1,
            individual_noise_var: 0.1,
            log_l2_var: 0.75,
            treat_intercept: 0.2727,
            treat_coef_l1: -0.0387,
            treat_coef_l2: 0.2179,
            treat_random_var: 0.0859,
            outcome_base: 200.0,
            outcome_treat: 100.0,
            outcome_l1: -0.98,
            outcome_l2: -0.145,
            outcome_spillover: 50.0,
            censor_frailty_var: 1.25,
            censor_hazard: 0.015,
            censor_l1: 0.002,
            censor_l2: 0.015,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 || self.group_size == 0 {
            return Err(Error::InvalidArgument(
                "simulation needs at least one group of one member".into(),
            ));
        }
        for (name, v) in [
            ("group_noise_var", self.group_noise_var),
            ("individual_noise_var", self.individual_noise_var),
            ("log_l2_var", self.log_l2_var),
            ("treat_random_var", self.treat_random_var),
            ("censor_frailty_var", self.censor_frailty_var),
            ("censor_hazard", self.censor_hazard),
            ("covariate_exp_mean", self.covariate_exp_mean),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `Pr(A = 1 | L1, L2, b)` under the treatment model.
    pub fn treatment_prob(&self, l1: f64, l2: f64, b: f64) -> f64 {
        crate::numeric::expit(
            self.treat_intercept + self.treat_coef_l1 * l1 + self.treat_coef_l2 * l2 + b,
        )
    }

    /// Exponential outcome mean for own treatment `a` with `treated_others`
    /// of the `n-1` other members treated.
    pub fn outcome_mean(&self, a: bool, treated_others: usize, n: usize, l1: f64, l2: f64) -> f64 {
        let prop_others =
            if n > 1 { treated_others as f64 / (n - 1) as f64 } else { 0.0 };
        let mean = self.outcome_base
            + f64::from(u8::from(a)) * self.outcome_treat
            + self.outcome_l1 * l1
            + self.outcome_l2 * l2
            + self.outcome_spillover * prop_others;
        debug_assert!(mean > 0.0, "outcome mean must stay positive, got {mean}");
        mean.max(1e-12)
    }

    /// Censoring hazard rate for covariates `(l1, l2)` and frailty `e`.
    pub fn censor_rate(&self, l1: f64, l2: f64, frailty: f64) -> f64 {
        self.censor_hazard * (self.censor_l1 * l1 + self.censor_l2 * l2).exp() * frailty
    }

    /// The true propensity parameters, for known-weights estimation.
    pub fn true_propensity(&self) -> PropensityParams {
        PropensityParams {
            theta_x: vec![self.treat_intercept, self.treat_coef_l1, self.treat_coef_l2],
            theta_s: self.treat_random_var,
            compliance: 1.0,
        }
    }

    /// The true censoring parameters, for known-weights estimation.
    pub fn true_censoring(&self) -> CensoringParams {
        CensoringParams {
            theta_c: vec![self.censor_l1, self.censor_l2],
            theta_h: self.censor_hazard,
            theta_r: self.censor_frailty_var,
        }
    }

    /// The censoring design matching [`DgpParams::true_censoring`].
    pub fn censoring_design(&self) -> CensoringDesign {
        CensoringDesign::new(vec!["L1", "L2"])
    }
}

/// Retained per-member generation state: covariates, the shared potential-
/// outcome uniform, and the factual censoring/event times.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMember {
    pub l1: f64,
    pub l2: f64,
    pub uniform: f64,
    pub censor_time: f64,
    pub factual_time: f64,
}

/// Per-group potential-outcome state.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGroup {
    pub random_intercept: f64,
    pub frailty: f64,
    pub members: Vec<PotentialMember>,
}

/// Potential event times `T_ij(a, k)` for the generated population, realized
/// lazily from the stored uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeStore {
    pub groups: Vec<PotentialGroup>,
    params: DgpParams,
}

impl PotentialOutcomeStore {
    /// `T_ij(a, k)`: potential event time for member `j` of group `g` under
    /// own treatment `a` with `k` treated others.
    pub fn potential_time(&self, g: usize, j: usize, a: bool, treated_others: usize) -> f64 {
        let group = &self.groups[g];
        let member = &group.members[j];
        let mean =
            self.params.outcome_mean(a, treated_others, group.members.len(), member.l1, member.l2);
        -mean * (1.0 - member.uniform).ln()
    }
}

/// A simulated study together with its generation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStudy {
    pub data: StudyData,
    pub potentials: PotentialOutcomeStore,
}

struct MemberDraw {
    l1: f64,
    l2: f64,
    treated: bool,
    uniform: f64,
    censor_uniform: f64,
}

fn draw_group_members<R: Rng>(
    params: &DgpParams,
    rng: &mut R,
    with_factual: bool,
) -> (f64, f64, f64, Vec<MemberDraw>) {
    let sd = |v: f64| v.sqrt();
    let n_r1 = Normal::new(0.0, sd(params.group_noise_var)).expect("valid sd");
    let n_r2 = Normal::new(0.0, sd(params.individual_noise_var)).expect("valid sd");
    let n_w = Normal::new(0.0, sd(params.log_l2_var)).expect("valid sd");

    let r1: f64 = n_r1.sample(rng);
    let (b, e) = if with_factual {
        let b = Normal::new(0.0, sd(params.treat_random_var)).expect("valid sd").sample(rng);
        let shape = 1.0 / params.censor_frailty_var;
        let e = Gamma::new(shape, params.censor_frailty_var).expect("valid gamma").sample(rng);
        (b, e)
    } else {
        (0.0, 1.0)
    };

    let members = (0..params.group_size)
        .map(|_| {
            let v: f64 = -params.covariate_exp_mean * (1.0 - rng.random::<f64>()).ln();
            let r2: f64 = n_r2.sample(rng);
            let l1 = (v + r1 + r2).min(params.covariate_cap) / params.covariate_scale;
            let l2 = (r1 + r2 + n_w.sample(rng)).exp();
            let (treated, uniform, censor_uniform) = if with_factual {
                let p = params.treatment_prob(l1, l2, b);
                let treated = rng.random::<f64>() < p;
                let uniform = rng.random::<f64>();
                let censor_uniform = rng.random::<f64>();
                (treated, uniform, censor_uniform)
            } else {
                (false, rng.random::<f64>(), 0.0)
            };
            MemberDraw { l1, l2, treated, uniform, censor_uniform }
        })
        .collect();
    (r1, b, e, members)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate one study on RNG stream `stream` of the seed in `params`.
/// Replicates use distinct streams; stream 0 is the plain dataset.
pub fn simulate_dataset_stream(params: &DgpParams, stream: u64) -> Result<SimulatedStudy> {
    params.validate()?;
    let mut rng = rng_for(params.seed, stream);
    let n = params.group_size;

    let mut groups = Vec::with_capacity(params.num_groups);
    let mut pot_groups = Vec::with_capacity(params.num_groups);
    for gi in 0..params.num_groups {
        let (_r1, b, e, draws) = draw_group_members(params, &mut rng, true);
        let treated_total = draws.iter().filter(|d| d.treated).count();

        let mut members = Vec::with_capacity(n);
        let mut pot_members = Vec::with_capacity(n);
        for (ji, d) in draws.iter().enumerate() {
            let treated_others = treated_total - usize::from(d.treated);
            let mean = params.outcome_mean(d.treated, treated_others, n, d.l1, d.l2);
            let event_time = -mean * (1.0 - d.uniform).ln();
            let rate = params.censor_rate(d.l1, d.l2, e);
            let censor_time = -(1.0 - d.censor_uniform).ln() / rate;
            let event = event_time <= censor_time;
            members.push(IndividualRecord {
                individual_id: format!("i{}", ji + 1),
                covariates: vec![d.l1, d.l2],
                treatment: d.treated,
                observed_time: event_time.min(censor_time),
                event,
            });
            pot_members.push(PotentialMember {
                l1: d.l1,
                l2: d.l2,
                uniform: d.uniform,
                censor_time,
                factual_time: event_time,
            });
        }
        groups.push(GroupData { group_id: format!("g{}", gi + 1), members });
        pot_groups.push(PotentialGroup { random_intercept: b, frailty: e, members: pot_members });
    }

    Ok(SimulatedStudy {
        data: StudyData { groups, covariate_names: vec!["L1".into(), "L2".into()] },
        potentials: PotentialOutcomeStore { groups: pot_groups, params: params.clone() },
    })
}

/// Generate the study on the default stream.
pub fn simulate_dataset(params: &DgpParams) -> Result<SimulatedStudy> {
    simulate_dataset_stream(params, 0)
}

/// Binomial policy weights `C(n-1, k) α^k (1-α)^{n-1-k}` for `k = 0..n-1`,
/// computed in log space.
pub fn binomial_policy_weights(others: usize, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "allocation probability must lie in (0,1), got {alpha}"
        )));
    }
    let la = alpha.ln();
    let l1a = (1.0 - alpha).ln();
    Ok((0..=others)
        .map(|k| (ln_choose(others, k) + k as f64 * la + (others - k) as f64 * l1a).exp())
        .collect())
}

/// Compact counterfactual population for approximating `μ(t,a,α)` and
/// `μ(t,α)`: per member only the covariates and the shared uniform are kept;
/// potential times are reconstructed on demand.
#[derive(Debug, Clone)]
pub struct OraclePopulation {
    members: Vec<(f64, f64, f64)>, // (l1, l2, uniform)
    group_size: usize,
    num_groups: usize,
    params: DgpParams,
}

impl OraclePopulation {
    /// Generate `num_groups` counterfactual groups on the oracle's own seed.
    pub fn generate(params: &DgpParams, num_groups: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if num_groups == 0 {
            return Err(Error::InvalidArgument("oracle needs at least one group".into()));
        }
        let n = params.group_size;
        // Generate in parallel chunks of whole groups, one RNG stream per
        // chunk, so the population is deterministic and independent of the
        // thread schedule.
        const CHUNK: usize = 4096;
        let num_chunks = num_groups.div_ceil(CHUNK);
        let chunks: Vec<Vec<(f64, f64, f64)>> = (0..num_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK;
                let hi = ((ci + 1) * CHUNK).min(num_groups);
                let mut rng = rng_for(seed, 1_000_000 + ci as u64);
                let mut out = Vec::with_capacity((hi - lo) * n);
                for _ in lo..hi {
                    let (_r1, _b, _e, draws) = draw_group_members(params, &mut rng, false);
                    for d in draws {
                        out.push((d.l1, d.l2, d.uniform));
                    }
                }
                out
            })
            .collect();
        let mut members = Vec::with_capacity(num_groups * n);
        for chunk in chunks {
            members.extend(chunk);
        }
        Ok(OraclePopulation { members, group_size: n, num_groups, params: params.clone() })
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    /// `T_ij(a, k)` reconstructed from the stored uniform.
    pub fn potential_time(&self, group: usize, member: usize, a: bool, treated_others: usize) -> f64 {
        let (l1, l2, u) = self.members[group * self.group_size + member];
        let mean = self.params.outcome_mean(a, treated_others, self.group_size, l1, l2);
        -mean * (1.0 - u).ln()
    }

    /// Truth approximation
    /// `m⁻¹ Σ_i n⁻¹ Σ_j Σ_k C(n-1,k) α^k (1-α)^{n-1-k} I{T_ij(a,k) ≤ t}`,
    /// with the marginal target as the α-mixture over own treatment.
    pub fn true_mu(&self, t: f64, a: Option<bool>, alpha: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("time horizon must be positive, got {t}")));
        }
        match a {
            Some(a) => self.mu_for(t, a, alpha),
            None => {
                let mu1 = self.mu_for(t, true, alpha)?;
                let mu0 = self.mu_for(t, false, alpha)?;
                Ok(alpha * mu1 + (1.0 - alpha) * mu0)
            }
        }
    }

    fn mu_for(&self, t: f64, a: bool, alpha: f64) -> Result<f64> {
        let n = self.group_size;
        let weights = binomial_policy_weights(n - 1, alpha)?;
        let sums: Vec<f64> = self
            .members
            .par_chunks(self.group_size.max(1) * 1024)
            .map(|chunk| {
                let mut acc = 0.0;
                for &(l1, l2, u) in chunk {
                    let xi = -(1.0 - u).ln();
                    for (k, w) in weights.iter().enumerate() {
                        let mean = self.params.outcome_mean(a, k, n, l1, l2);
                        if mean * xi <= t {
                            acc += w;
                        }
                    }
                }
                acc
            })
            .collect();
        let total: f64 = sums.iter().sum();
        Ok(total / self.members.len() as f64)
    }
}

/// Weighting mode for the replication harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Nuisance models fitted per replicate; their scores enter the stack.
    FittedWeights,
    /// True generation-model weights; only target components are stacked.
    KnownWeights,
}

/// Settings for [`replicate`].
#[derive(Debug, Clone)]
pub struct ReplicateConfig {
    pub replications: usize,
    pub targets: Vec<TargetSpec>,
    pub mode: WeightMode,
    pub quad: QuadratureConfig,
    pub opt: OptimizerConfig,
    pub jac: JacobianConfig,
    pub ci_level: f64,
    /// Oracle population size used for the truth column.
    pub oracle_groups: usize,
    pub oracle_seed: u64,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            replications: 1000,
            targets: Vec::new(),
            mode: WeightMode::FittedWeights,
            quad: QuadratureConfig::default(),
            opt: OptimizerConfig::default(),
            jac: JacobianConfig::default(),
            ci_level: 0.95,
            oracle_groups: 1_000_000,
            oracle_seed: 424242,
        }
    }
}

/// One row of the replication summary.
#[derive(Debug, Clone)]
pub struct ReplicationRow {
    pub alpha: f64,
    pub own_treatment: Option<bool>,
    pub truth: f64,
    /// Mean point estimate minus the oracle truth.
    pub bias: f64,
    /// Empirical standard error: SD of the point estimates.
    pub ese: f64,
    /// Average sandwich standard error.
    pub ase: f64,
    /// Empirical coverage of Normal Wald intervals at `ci_level`.
    pub ec: f64,
    /// Empirical coverage of t intervals with `m_used - r` degrees of freedom.
    pub ec_t: f64,
    pub n_failed: usize,
}

/// Replication summary across targets.
#[derive(Debug, Clone)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
    pub replications: usize,
    pub num_groups: usize,
    pub group_size: usize,
}

impl ReplicationTable {
    /// CSV schema: `alpha,a,truth,bias,ese,ase,ec,ec_t,n_failed`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["alpha", "a", "truth", "bias", "ese", "ase", "ec", "ec_t", "n_failed"])?;
        for row in &self.rows {
            wtr.write_record([
                fmt_g17(row.alpha),
                row.own_treatment.map(|a| u8::from(a).to_string()).unwrap_or_default(),
                fmt_g17(row.truth),
                fmt_g17(row.bias),
                fmt_g17(row.ese),
                fmt_g17(row.ase),
                fmt_g17(row.ec),
                fmt_g17(row.ec_t),
                row.n_failed.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct RepOutcome {
    estimates: Vec<f64>,
    std_errors: Vec<f64>,
    df: usize,
}

fn run_one_replicate(
    params: &DgpParams,
    cfg: &ReplicateConfig,
    rep: u64,
) -> Result<RepOutcome> {
    let study = simulate_dataset_stream(params, 1 + rep)?;
    let design = params.censoring_design();
    let resolved = design.resolve(&study.data.covariate_names)?;

    let (prop, cens, mode) = match cfg.mode {
        WeightMode::FittedWeights => {
            let prop_init = PropensityParams {
                theta_x: vec![0.0; study.data.covariate_names.len() + 1],
                theta_s: 0.25,
                compliance: 1.0,
            };
            let prop = fit_propensity(&study.data, &prop_init, &cfg.quad, &cfg.opt)?;
            let cens_init = default_censoring_init(&study.data, &design);
            let cens = fit_censoring(&study.data, &design, &cens_init, &cfg.opt)?;
            (prop.params, cens.params, NuisanceMode::Estimated)
        }
        WeightMode::KnownWeights => {
            (params.true_propensity(), params.true_censoring(), NuisanceMode::Known)
        }
    };

    let out = sandwich(
        &study.data,
        &resolved,
        &cfg.quad,
        &prop,
        &cens,
        &cfg.targets,
        mode,
        &cfg.jac,
    )?;
    let ses = (0..cfg.targets.len()).map(|k| out.target_se(k)).collect();
    Ok(RepOutcome { estimates: out.estimates, std_errors: ses, df: out.df })
}

/// Replicate the design `replications` times and summarize bias, ESE, ASE,
/// and empirical coverage per target against the oracle truth.
pub fn replicate_with_truth(
    params: &DgpParams,
    cfg: &ReplicateConfig,
    truths: &[f64],
) -> Result<ReplicationTable> {
    if cfg.replications < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    if cfg.targets.is_empty() {
        return Err(Error::InvalidArgument("no targets requested".into()));
    }
    if truths.len() != cfg.targets.len() {
        return Err(Error::InvalidArgument("one truth value per target required".into()));
    }

    let results: Vec<Result<RepOutcome>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| run_one_replicate(params, cfg, rep))
        .collect();

    let mut ok = Vec::new();
    let mut n_failed = 0usize;
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                n_failed += 1;
                log::warn!("replicate failed: {e}");
            }
        }
    }
    if ok.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} replicates succeeded; nothing to summarize",
            ok.len()
        )));
    }

    let reps = ok.len() as f64;
    let mut rows = Vec::with_capacity(cfg.targets.len());
    for (k, spec) in cfg.targets.iter().enumerate() {
        let truth = truths[k];
        let ests: Vec<f64> = ok.iter().map(|o| o.estimates[k]).collect();
        let mean = ests.iter().sum::<f64>() / reps;
        let var = ests.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1.0);
        let ase = ok.iter().map(|o| o.std_errors[k]).sum::<f64>() / reps;
        let mut covered = 0usize;
        let mut covered_t = 0usize;
        for o in &ok {
            let (lo, hi) = wald_ci(o.estimates[k], o.std_errors[k], cfg.ci_level, None)?;
            if lo <= truth && truth <= hi {
                covered += 1;
            }
            let (lo, hi) =
                wald_ci(o.estimates[k], o.std_errors[k], cfg.ci_level, Some(o.df.max(1)))?;
            if lo <= truth && truth <= hi {
                covered_t += 1;
            }
        }
        rows.push(ReplicationRow {
            alpha: spec.alpha,
            own_treatment: spec.own_treatment,
            truth,
            bias: mean - truth,
            ese: var.sqrt(),
            ase,
            ec: covered as f64 / reps,
            ec_t: covered_t as f64 / reps,
            n_failed,
        });
    }
    Ok(ReplicationTable {
        rows,
        replications: cfg.replications,
        num_groups: params.num_groups,
        group_size: params.group_size,
    })
}

/// [`replicate_with_truth`] with the truth column computed from a freshly
/// generated oracle population of `cfg.oracle_groups` groups.
pub fn replicate(params: &DgpParams, cfg: &ReplicateConfig) -> Result<ReplicationTable> {
    let oracle = OraclePopulation::generate(params, cfg.oracle_groups, cfg.oracle_seed)?;
    let truths: Vec<f64> = cfg
        .targets
        .iter()
        .map(|s| oracle.true_mu(s.time_horizon, s.own_treatment, s.alpha))
        .collect::<Result<_>>()?;
    replicate_with_truth(params, cfg, &truths)
}
