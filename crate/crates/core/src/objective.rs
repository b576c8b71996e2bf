//! PPO clipped surrogate, its aggregation under the two length
//! normalizations, and the exact gradient with respect to the tabular
//! policy logits.
//!
//! The objective is maximized throughout: callers ascend the returned
//! gradient. For a batch of `R` responses with per-response weights `w_i`
//! and token surrogates `l_ij`:
//!
//! * per-response normalization: `(1/R) * sum_i (1/|tau_i|) * sum_j w_i * l_ij`
//! * mean-length normalization:  `(1/(R * mean_len)) * sum_i sum_j w_i * l_ij`

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{Normalization, TrainConfig};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::types::{AdvantageSet, Batch};

/// One token's contribution to the clipped surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenLossTerm {
    pub ratio: f64,
    pub advantage: f64,
    pub surrogate: f64,
    /// The clipped branch was strictly smaller than the unclipped one.
    pub clipped: bool,
}

/// Probability ratio `exp(new - old)` between current and behaviour policy.
pub fn prob_ratio(new_logprob: f64, old_logprob: f64) -> Result<f64> {
    if !new_logprob.is_finite() || !old_logprob.is_finite() {
        return Err(Error::Invalid(format!(
            "non-finite log-probability (new {new_logprob}, old {old_logprob})"
        )));
    }
    Ok(libm::exp(new_logprob - old_logprob))
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn ppo_token_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> TokenLossTerm {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    TokenLossTerm {
        ratio,
        advantage,
        surrogate: unclipped.min(clipped),
        clipped: clipped < unclipped,
    }
}

/// Normalization factor applied to every token of a response of length `len`.
pub fn token_scale(normalization: Normalization, num_responses: usize, mean_length: f64, len: usize) -> f64 {
    match normalization {
        Normalization::PerResponse => 1.0 / (num_responses as f64 * len as f64),
        Normalization::MeanLength => 1.0 / (num_responses as f64 * mean_length),
    }
}

/// Weighted, normalized sum of already-computed token surrogates.
///
/// `responses[i]` holds the surrogates of response `i`. The mean length is
/// passed explicitly so it can be held fixed while responses change.
pub fn normalized_sum(
    responses: &[&[f64]],
    weights: &[f64],
    normalization: Normalization,
    mean_length: f64,
) -> f64 {
    let r = responses.len();
    responses
        .iter()
        .zip(weights)
        .map(|(s, w)| {
            let scale = token_scale(normalization, r, mean_length, s.len());
            s.iter().map(|l| w * l).sum::<f64>() * scale
        })
        .sum()
}

fn check_sets(batch: &Batch, sets: &[AdvantageSet]) -> Result<()> {
    if sets.len() != batch.groups().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} advantage sets for {} groups",
            sets.len(),
            batch.groups().len()
        )));
    }
    for (g, (group, set)) in batch.groups().iter().zip(sets).enumerate() {
        if group.len() != set.len() {
            return Err(Error::ShapeMismatch(format!(
                "group {g} has {} responses but {} advantages",
                group.len(),
                set.len()
            )));
        }
    }
    Ok(())
}

/// Token surrogates for every response, given the current per-token
/// log-probabilities `new_logprobs[group][response][token]`.
pub fn surrogate_terms(
    batch: &Batch,
    sets: &[AdvantageSet],
    new_logprobs: &[Vec<Vec<f64>>],
    clip_eps: f64,
) -> Result<Vec<Vec<Vec<TokenLossTerm>>>> {
    check_sets(batch, sets)?;
    if new_logprobs.len() != batch.groups().len() {
        return Err(Error::ShapeMismatch(format!(
            "log-probabilities for {} groups, batch has {}",
            new_logprobs.len(),
            batch.groups().len()
        )));
    }
    let mut out = Vec::with_capacity(batch.groups().len());
    for (g, ((group, set), lps)) in batch.groups().iter().zip(sets).zip(new_logprobs).enumerate() {
        if lps.len() != group.len() {
            return Err(Error::ShapeMismatch(format!(
                "group {g}: log-probabilities for {} responses, expected {}",
                lps.len(),
                group.len()
            )));
        }
        let mut group_terms = Vec::with_capacity(group.len());
        for (i, (traj, lp)) in group.trajectories().iter().zip(lps).enumerate() {
            if lp.len() != traj.len() {
                return Err(Error::ShapeMismatch(format!(
                    "group {g} response {i}: {} log-probabilities for {} tokens",
                    lp.len(),
                    traj.len()
                )));
            }
            let adv = set.advantages()[i];
            let terms = lp
                .iter()
                .zip(traj.old_logprobs())
                .enumerate()
                .map(|(j, (new, old))| {
                    let ratio = prob_ratio(*new, *old).map_err(|_| Error::NonFinite {
                        group: g,
                        response: i,
                        token: j,
                        what: "log-probability",
                    })?;
                    if !ratio.is_finite() {
                        return Err(Error::NonFinite {
                            group: g,
                            response: i,
                            token: j,
                            what: "probability ratio",
                        });
                    }
                    Ok(ppo_token_surrogate(ratio, adv, clip_eps))
                })
                .collect::<Result<Vec<_>>>()?;
            group_terms.push(terms);
        }
        out.push(group_terms);
    }
    Ok(out)
}

/// The objective value from explicit current log-probabilities.
pub fn aggregate_objective(
    batch: &Batch,
    sets: &[AdvantageSet],
    new_logprobs: &[Vec<Vec<f64>>],
    config: &TrainConfig,
) -> Result<f64> {
    let terms = surrogate_terms(batch, sets, new_logprobs, config.clip_epsilon)?;
    let r = batch.num_responses();
    let mut total = 0.0;
    for ((group, set), group_terms) in batch.groups().iter().zip(sets).zip(&terms) {
        for ((traj, w), response_terms) in group.trajectories().iter().zip(set.weights()).zip(group_terms) {
            let scale = token_scale(config.normalization, r, batch.mean_length(), traj.len());
            total += response_terms.iter().map(|t| w * t.surrogate).sum::<f64>() * scale;
        }
    }
    Ok(total)
}

/// Current log-probabilities of every response in the batch.
pub fn batch_logprobs(batch: &Batch, policy: &TabularPolicy) -> Result<Vec<Vec<Vec<f64>>>> {
    batch
        .groups()
        .iter()
        .map(|g| g.trajectories().iter().map(|t| policy.logprob(t)).collect())
        .collect()
}

/// The objective value under `policy`.
pub fn objective_value(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<f64> {
    aggregate_objective(batch, sets, &batch_logprobs(batch, policy)?, config)
}

/// Accumulates `coef(group, response) * d/dtheta sum_j l_ij * scale_i` into
/// `out` for every response with `Some` coefficient. Groups and responses
/// are visited in index order so the reduction is reproducible.
fn accumulate_gradient<F>(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
    groups: core::ops::Range<usize>,
    mut coef: F,
    out: &mut [f64],
) -> Result<()>
where
    F: FnMut(usize, usize, f64, f64) -> Option<f64>,
{
    let r = batch.num_responses();
    for g in groups {
        let group = &batch.groups()[g];
        let set = &sets[g];
        for (i, traj) in group.trajectories().iter().enumerate() {
            let adv = set.advantages()[i];
            let Some(c) = coef(g, i, adv, set.weights()[i]) else {
                continue;
            };
            let scale = token_scale(config.normalization, r, batch.mean_length(), traj.len());
            let (lps, grads) = policy.logprob_with_grad(traj)?;
            for (j, ((new, old), row)) in lps.iter().zip(traj.old_logprobs()).zip(&grads).enumerate() {
                let nonfinite = |what| Error::NonFinite {
                    group: g,
                    response: i,
                    token: j,
                    what,
                };
                let ratio = prob_ratio(*new, *old).map_err(|_| nonfinite("log-probability"))?;
                let term = ppo_token_surrogate(ratio, adv, config.clip_epsilon);
                if term.clipped {
                    continue;
                }
                // d(ratio * A)/dtheta = A * ratio * dlogpi/dtheta
                let k = c * adv * ratio * scale;
                if !k.is_finite() {
                    return Err(nonfinite("gradient coefficient"));
                }
                for (v, gv) in row.values.iter().enumerate() {
                    out[row.offset + v] += k * gv;
                }
            }
        }
    }
    Ok(())
}

/// Exact gradient of [`objective_value`] with respect to the policy logits.
pub fn objective_gradient(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    check_sets(batch, sets)?;
    let mut out = vec![0.0; policy.params().len()];
    accumulate_gradient(
        batch,
        sets,
        policy,
        config,
        0..batch.groups().len(),
        |_, _, _, w| Some(w),
        &mut out,
    )?;
    Ok(out)
}

/// Positive- and negative-advantage gradient components before hysteretic
/// weighting, under the configured normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientComponents {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

fn split_range(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
    groups: core::ops::Range<usize>,
) -> Result<GradientComponents> {
    let n = policy.params().len();
    let mut pos = vec![0.0; n];
    let mut neg = vec![0.0; n];
    accumulate_gradient(
        batch,
        sets,
        policy,
        config,
        groups.clone(),
        |_, _, a, _| (a > 0.0).then_some(1.0),
        &mut pos,
    )?;
    accumulate_gradient(
        batch,
        sets,
        policy,
        config,
        groups,
        |_, _, a, _| (a < 0.0).then_some(1.0),
        &mut neg,
    )?;
    Ok(GradientComponents { pos, neg })
}

/// `(G_pos, G_neg)` over the whole batch. With a batch-wide weight `alpha`
/// the objective gradient equals `G_pos + alpha * G_neg`.
pub fn split_gradient_components(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<GradientComponents> {
    check_sets(batch, sets)?;
    split_range(batch, sets, policy, config, 0..batch.groups().len())
}

/// Per-group components, for weighting schemes whose `alpha` varies
/// between groups.
pub fn split_gradient_components_by_group(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<Vec<GradientComponents>> {
    check_sets(batch, sets)?;
    (0..batch.groups().len())
        .map(|g| split_range(batch, sets, policy, config, g..g + 1))
        .collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// `|| grad - sum_g (G_pos_g + alpha_g * G_neg_g) ||_2`, which vanishes up to
/// rounding for every weighting scheme.
pub fn decomposition_residual(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<f64> {
    let grad = objective_gradient(batch, sets, policy, config)?;
    let mut recon = vec![0.0; grad.len()];
    let shared_alpha = sets
        .iter()
        .all(|s| s.alpha_used() == sets[0].alpha_used());
    if shared_alpha {
        let c = split_gradient_components(batch, sets, policy, config)?;
        let alpha = sets[0].alpha_used();
        for (r, (p, n)) in recon.iter_mut().zip(c.pos.iter().zip(&c.neg)) {
            *r = p + alpha * n;
        }
    } else {
        let per_group = split_gradient_components_by_group(batch, sets, policy, config)?;
        for (c, set) in per_group.iter().zip(sets) {
            for (r, (p, n)) in recon.iter_mut().zip(c.pos.iter().zip(&c.neg)) {
                *r += p + set.alpha_used() * n;
            }
        }
    }
    let diff: Vec<f64> = grad.iter().zip(&recon).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff))
}
