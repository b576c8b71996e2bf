//! Response-level advantage estimators and hysteretic weighting rules.
//!
//! One scalar advantage is computed per response and later broadcast to
//! every token of that response. Negative-advantage responses are scaled
//! by a weight `alpha in [0, 1]`; zero and positive ones keep weight 1.

use alloc::vec::Vec;

use crate::config::{EstimatorVariant, TrainConfig};
use crate::error::{Error, Result};
use crate::types::{sign_frequencies, AdvantageSet, Batch, BatchStats, Estimator, Group};

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    libm::sqrt(var)
}

fn check_group_size(rewards: &[f64]) -> Result<()> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall { len: rewards.len() });
    }
    Ok(())
}

/// Group-standardized advantage `(R_i - mean) / (std + std_eps)` with the
/// population standard deviation.
pub fn grpo_advantage(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>> {
    check_group_size(rewards)?;
    let m = mean(rewards);
    let denom = population_std(rewards) + std_eps;
    Ok(rewards
        .iter()
        .map(|r| {
            let centered = r - m;
            if centered == 0.0 {
                0.0
            } else {
                centered / denom
            }
        })
        .collect())
}

/// Mean-centered advantage `R_i - mean(R)`; sums to zero.
pub fn centered_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    check_group_size(rewards)?;
    let m = mean(rewards);
    Ok(rewards.iter().map(|r| r - m).collect())
}

/// `1` for non-negative advantages, `alpha` otherwise.
pub fn hysteretic_weights(advantages: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
        });
    }
    Ok(advantages
        .iter()
        .map(|a| if *a >= 0.0 { 1.0 } else { alpha })
        .collect())
}

/// Strict-sign counts `(n_pos, n_neg, n_zero)`.
pub fn sign_counts(advantages: &[f64]) -> (usize, usize, usize) {
    advantages.iter().fold((0, 0, 0), |(p, n, z), a| {
        if *a > 0.0 {
            (p + 1, n, z)
        } else if *a < 0.0 {
            (p, n + 1, z)
        } else {
            (p, n, z + 1)
        }
    })
}

/// Batch-adaptive negative weight `clip(p_pos / (p_neg + sign_eps), alpha_min, 1)`.
///
/// Returns 1 when no response carries a non-zero advantage.
pub fn adaptive_alpha(n_pos: usize, n_neg: usize, alpha_min: f64, sign_eps: f64) -> f64 {
    let total = n_pos + n_neg;
    if total == 0 {
        return 1.0;
    }
    let (p_pos, p_neg) = sign_frequencies(n_pos, n_neg);
    (p_pos / (p_neg + sign_eps)).clamp(alpha_min, 1.0)
}

/// Variance-aware negative weight
/// `alpha0 * (1 - exp(-alpha1 / (delta^2 + v_eps)))` with
/// `delta = 0.5 - std(R)`.
pub fn variance_alpha(rewards: &[f64], alpha0: f64, alpha1: f64, v_eps: f64) -> f64 {
    let delta = 0.5 - population_std(rewards);
    alpha0 * (1.0 - libm::exp(-alpha1 / (delta * delta + v_eps)))
}

fn raw_advantages(group: &Group, config: &TrainConfig) -> Result<(Vec<f64>, Estimator)> {
    match config.estimator_variant {
        EstimatorVariant::Grpo => Ok((
            grpo_advantage(group.rewards(), config.std_eps)?,
            Estimator::GrpoStandardized,
        )),
        _ => Ok((centered_advantage(group.rewards())?, Estimator::Centered)),
    }
}

/// Advantages and weights for one group under the configured variant.
///
/// `batch_stats` supplies the pooled sign counts used by the adaptive
/// variants; it is ignored by the others.
pub fn compute_advantage_set(
    group: &Group,
    config: &TrainConfig,
    batch_stats: &BatchStats,
) -> Result<AdvantageSet> {
    let (advantages, estimator) = raw_advantages(group, config)?;
    let alpha = match config.estimator_variant {
        EstimatorVariant::Grpo => 1.0,
        EstimatorVariant::HpoFixed => config
            .alpha_fixed
            .ok_or_else(|| Error::Config("estimator hpo_fixed requires alpha_fixed".into()))?,
        EstimatorVariant::AHpo | EstimatorVariant::NHpo => adaptive_alpha(
            batch_stats.n_pos,
            batch_stats.n_neg,
            config.alpha_min,
            config.sign_eps,
        ),
        EstimatorVariant::VHpo => variance_alpha(
            group.rewards(),
            config.v_hpo_alpha0,
            config.v_hpo_alpha1,
            config.v_hpo_eps,
        ),
    };
    let weights = hysteretic_weights(&advantages, alpha)?;
    AdvantageSet::new(advantages, weights, alpha, estimator)
}

/// Pooled sign statistics over every group of a batch, using the
/// configured estimator's advantages.
pub fn batch_sign_stats(batch: &Batch, config: &TrainConfig) -> Result<BatchStats> {
    let (mut n_pos, mut n_neg, mut n_zero) = (0, 0, 0);
    for group in batch.groups() {
        let (adv, _) = raw_advantages(group, config)?;
        let (p, n, z) = sign_counts(&adv);
        n_pos += p;
        n_neg += n;
        n_zero += z;
    }
    Ok(BatchStats::from_counts(
        n_pos,
        n_neg,
        n_zero,
        config.alpha_min,
        config.sign_eps,
    ))
}

/// Batch-level sign statistics followed by one [`AdvantageSet`] per group.
pub fn batch_advantage_sets(
    batch: &Batch,
    config: &TrainConfig,
) -> Result<(Vec<AdvantageSet>, BatchStats)> {
    let stats = batch_sign_stats(batch, config)?;
    let sets = batch
        .groups()
        .iter()
        .map(|g| compute_advantage_set(g, config, &stats))
        .collect::<Result<Vec<_>>>()?;
    Ok((sets, stats))
}
