//! Group-relative advantages and the KL penalty estimator.

use serde::{Deserialize, Serialize};

use super::GrpoError;

/// Below this standard deviation a group carries no learning signal.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// z-score each reward against the other rollouts of the same query.
    #[default]
    Group,
    /// z-score per-position rewards within each trajectory.
    Trajectory,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(r - mean) / std` with population std; all zeros for a degenerate group.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_std(values);
    if std < DEGENERATE_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

pub fn group_normalize(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite(format!("reward {bad}")));
    }
    Ok(zscore(rewards))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRecord {
    pub beta: f64,
    /// Per-position `exp(d) - d - 1` with `d = logp_ref - logp_policy`.
    pub values: Vec<f64>,
}

impl KlRecord {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `beta` times the per-position mean; zero for an empty record.
    pub fn weighted_mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.beta * self.sum() / self.values.len() as f64
        }
    }
}

/// Non-negative KL estimate at one position.
pub fn kl_value(logp_policy: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_policy;
    // exp_m1 keeps precision near d = 0, where the terms nearly cancel
    (d.exp_m1() - d).max(0.0)
}

pub fn kl_term(logp_policy: &[f64], logp_ref: &[f64], beta: f64) -> Result<KlRecord, GrpoError> {
    if logp_policy.len() != logp_ref.len() {
        return Err(GrpoError::LengthMismatch {
            what: "reference log-probs",
            expected: logp_policy.len(),
            got: logp_ref.len(),
        });
    }
    Ok(KlRecord {
        beta,
        values: logp_policy
            .iter()
            .zip(logp_ref)
            .map(|(&p, &r)| kl_value(p, r))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        assert_eq!(group_normalize(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_normalize(&[0.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(
            group_normalize(&[2.5, 0.0, 0.0, 2.5]).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert!(matches!(
            group_normalize(&[1.0]),
            Err(GrpoError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn kl_examples() {
        let r = kl_term(&[-1.0, -2.0], &[-1.0, -2.0], 0.01).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0]);
        let r = kl_term(&[0.0], &[2f64.ln()], 0.01).unwrap();
        assert!((r.values[0] - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((r.values[0] - 0.3069).abs() < 1e-4);
        assert!(kl_term(&[0.0], &[], 0.01).is_err());
    }
}
