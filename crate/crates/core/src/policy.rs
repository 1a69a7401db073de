//! Bernoulli allocation-strategy probabilities.
//!
//! Under policy `α` each individual independently receives treatment with
//! probability `α`, so a treatment vector `a` has probability
//! `π(a, α) = Π_k α^{a_k} (1-α)^{1-a_k}`. Products are evaluated in log
//! space; group sizes in the hundreds would underflow a direct product.

use crate::error::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "allocation probability must lie in (0,1), got {alpha}"
        )))
    }
}

/// `ln π` for a vector with `treated` ones out of `total` entries.
pub fn log_policy_prob_counts(treated: usize, total: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if treated > total {
        return Err(Error::InvalidArgument(format!(
            "treated count {treated} exceeds vector length {total}"
        )));
    }
    Ok(treated as f64 * alpha.ln() + (total - treated) as f64 * (1.0 - alpha).ln())
}

/// `π(a, α)`; the empty vector yields 1 (empty product). Probability depends
/// only on the number of ones and the length.
pub fn group_policy_prob(a: &[bool], alpha: f64) -> Result<f64> {
    let treated = a.iter().filter(|&&x| x).count();
    Ok(log_policy_prob_counts(treated, a.len(), alpha)?.exp())
}

/// `π(a_{-j}, α)`: the policy probability of `a` with entry `j` removed.
pub fn leave_one_out_policy_prob(a: &[bool], j: usize, alpha: f64) -> Result<f64> {
    if j >= a.len() {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out index {j} out of range for vector of length {}",
            a.len()
        )));
    }
    let treated = a.iter().filter(|&&x| x).count() - usize::from(a[j]);
    Ok(log_policy_prob_counts(treated, a.len() - 1, alpha)?.exp())
}
