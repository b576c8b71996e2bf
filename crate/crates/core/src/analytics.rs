//! Sign-imbalance statistics under sparse binary rewards and the
//! contribution-balance diagnostics used to judge adaptive weighting.

use alloc::vec::Vec;

use crate::advantage::{adaptive_alpha, sign_counts};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::objective::{l2_norm, split_gradient_components, TokenLossTerm};
use crate::policy::TabularPolicy;
use crate::rng::{Domain, RngStream};
use crate::types::{sign_frequencies, AdvantageSet, Batch, BatchStats};

/// Closed-form probabilities that a response in a group of `n` i.i.d.
/// Bernoulli(`p`) rewards gets a strictly positive / negative centered
/// advantage, and their ratio `p_neg / p_pos`.
///
/// A response is positive iff it succeeded and some other response failed:
/// `p_pos = p (1 - p^(n-1))`, and symmetrically
/// `p_neg = (1 - p) (1 - (1 - p)^(n-1))`.
pub fn closed_form_sign_probs(p: f64, n: usize) -> Result<(f64, f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
        });
    }
    if n < 2 {
        return Err(Error::GroupTooSmall { len: n });
    }
    let k = (n - 1) as f64;
    let p_pos = p * (1.0 - libm::pow(p, k));
    let p_neg = (1.0 - p) * (1.0 - libm::pow(1.0 - p, k));
    Ok((p_pos, p_neg, p_neg / p_pos))
}

/// Monte Carlo estimate of the per-response sign frequencies.
///
/// Standard errors are computed over groups (the per-group fraction of
/// positive responses is the i.i.d. unit), which accounts for the
/// correlation between responses sharing a group mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignFrequencyEstimate {
    pub p_pos_hat: f64,
    pub p_neg_hat: f64,
    pub se_pos: f64,
    pub se_neg: f64,
    /// `p_neg_hat / p_pos_hat` (infinite when no positive was observed).
    pub ratio: f64,
    /// Delta-method standard error of `ratio`.
    pub se_ratio: f64,
    pub num_groups: usize,
}

/// Groups simulated per random stream.
const MC_CHUNK: usize = 1 << 16;

pub fn monte_carlo_sign_probs(p: f64, n: usize, num_groups: usize, seed: u64) -> Result<SignFrequencyEstimate> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
        });
    }
    if n < 2 {
        return Err(Error::GroupTooSmall { len: n });
    }
    if num_groups == 0 {
        return Err(Error::Invalid("num_groups must be at least 1".into()));
    }
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut rewards = alloc::vec![0.0; n];
    let inv_n = 1.0 / n as f64;
    for chunk in 0..num_groups.div_ceil(MC_CHUNK) {
        let mut rng = RngStream::new(seed, Domain::MonteCarlo, p.to_bits(), n as u64, chunk as u64);
        let groups = MC_CHUNK.min(num_groups - chunk * MC_CHUNK);
        for _ in 0..groups {
            for r in rewards.iter_mut() {
                *r = if rng.bernoulli(p) { 1.0 } else { 0.0 };
            }
            let mean = rewards.iter().sum::<f64>() * inv_n;
            let (pos, neg) = rewards.iter().fold((0usize, 0usize), |(a, b), r| {
                let adv = r - mean;
                (a + (adv > 0.0) as usize, b + (adv < 0.0) as usize)
            });
            let x = pos as f64 * inv_n;
            let y = neg as f64 * inv_n;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    }
    let g = num_groups as f64;
    let (mx, my) = (sx / g, sy / g);
    let var_x = (sxx / g - mx * mx).max(0.0);
    let var_y = (syy / g - my * my).max(0.0);
    let cov = sxy / g - mx * my;
    let se_pos = libm::sqrt(var_x / g);
    let se_neg = libm::sqrt(var_y / g);
    let (ratio, se_ratio) = if mx > 0.0 {
        let r = my / mx;
        // Var(Y/X) ~ (Var Y - 2 r Cov + r^2 Var X) / X^2
        let v = (var_y - 2.0 * r * cov + r * r * var_x).max(0.0) / (mx * mx);
        (r, libm::sqrt(v / g))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(SignFrequencyEstimate {
        p_pos_hat: mx,
        p_neg_hat: my,
        se_pos,
        se_neg,
        ratio,
        se_ratio,
        num_groups,
    })
}

/// Sign counts, adaptive weight and the surrogate contribution-balance
/// ratio `rho = (p_pos * m_pos) / (p_neg * m_neg)`, where `m_pos` / `m_neg`
/// are the mean absolute token surrogates over positive / negative
/// advantage responses. Zero-advantage responses enter neither pool.
///
/// `token_surrogates[group][response][token]` must match the batch shape.
pub fn surrogate_balance(
    batch: &Batch,
    sets: &[AdvantageSet],
    token_surrogates: &[Vec<Vec<TokenLossTerm>>],
    config: &TrainConfig,
) -> Result<BatchStats> {
    if sets.len() != batch.groups().len() || token_surrogates.len() != batch.groups().len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} groups, {} advantage sets, {} surrogate groups",
            batch.groups().len(),
            sets.len(),
            token_surrogates.len()
        )));
    }
    let (mut n_pos, mut n_neg, mut n_zero) = (0, 0, 0);
    let (mut sum_pos, mut cnt_pos, mut sum_neg, mut cnt_neg) = (0.0, 0usize, 0.0, 0usize);
    for (set, terms) in sets.iter().zip(token_surrogates) {
        let (p, n, z) = sign_counts(set.advantages());
        n_pos += p;
        n_neg += n;
        n_zero += z;
        if terms.len() != set.len() {
            return Err(Error::ShapeMismatch("surrogates per group do not match responses".into()));
        }
        for (a, response) in set.advantages().iter().zip(terms) {
            let s: f64 = response.iter().map(|t| libm::fabs(t.surrogate)).sum();
            if *a > 0.0 {
                sum_pos += s;
                cnt_pos += response.len();
            } else if *a < 0.0 {
                sum_neg += s;
                cnt_neg += response.len();
            }
        }
    }
    let (p_pos, p_neg) = sign_frequencies(n_pos, n_neg);
    let m_pos = if cnt_pos > 0 { sum_pos / cnt_pos as f64 } else { 0.0 };
    let m_neg = if cnt_neg > 0 { sum_neg / cnt_neg as f64 } else { 0.0 };
    let denom = p_neg * m_neg;
    let (rho, rho_defined) = if denom > 0.0 {
        ((p_pos * m_pos) / denom, true)
    } else {
        (f64::INFINITY, false)
    };
    Ok(BatchStats {
        n_pos,
        n_neg,
        n_zero,
        p_pos,
        p_neg,
        alpha_adaptive: adaptive_alpha(n_pos, n_neg, config.alpha_min, config.sign_eps),
        m_pos,
        m_neg,
        rho,
        rho_defined,
    })
}

/// `||G_pos||_2 / ||G_neg||_2`; infinite when the negative component
/// vanishes (and NaN only if both do, which an all-zero batch produces).
pub fn exact_gradient_norm_ratio(
    batch: &Batch,
    sets: &[AdvantageSet],
    policy: &TabularPolicy,
    config: &TrainConfig,
) -> Result<f64> {
    let c = split_gradient_components(batch, sets, policy, config)?;
    let (np, nn) = (l2_norm(&c.pos), l2_norm(&c.neg));
    Ok(if nn == 0.0 {
        if np == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        np / nn
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::batch_advantage_sets;
    use crate::config::EstimatorVariant;
    use crate::objective::{batch_logprobs, surrogate_terms};
    use crate::policy::Conditioning;
    use crate::types::{Estimator, Group, Token, Trajectory};
    use alloc::vec;

    #[test]
    fn closed_form_examples() {
        for n in 2..12 {
            let (a, b, r) = closed_form_sign_probs(0.5, n).unwrap();
            assert_eq!(a, b);
            assert_eq!(r, 1.0);
        }
        let (a, b, r) = closed_form_sign_probs(0.1, 8).unwrap();
        assert!((a - 0.0999999).abs() < 1e-7);
        assert!((b - 0.4695328).abs() < 1e-7);
        assert!((r - 4.695).abs() < 1e-3);
        let (a, b, r) = closed_form_sign_probs(0.25, 2).unwrap();
        assert!((a - 0.1875).abs() < 1e-15 && (b - 0.1875).abs() < 1e-15);
        assert!((r - 1.0).abs() < 1e-14);
        assert!(closed_form_sign_probs(0.0, 4).is_err());
        assert!(closed_form_sign_probs(1.0, 4).is_err());
        assert!(closed_form_sign_probs(0.3, 1).is_err());
    }

    /// Exact enumeration over all 2^n reward vectors.
    fn enumerate(p: f64, n: usize) -> (f64, f64) {
        let (mut pos, mut neg) = (0.0, 0.0);
        for mask in 0u32..(1 << n) {
            let rewards: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            let k = mask.count_ones() as i32;
            let prob = libm::pow(p, k as f64) * libm::pow(1.0 - p, (n as i32 - k) as f64);
            let mean = rewards.iter().sum::<f64>() / n as f64;
            // response 0 is representative by exchangeability
            if rewards[0] - mean > 0.0 {
                pos += prob;
            } else if rewards[0] - mean < 0.0 {
                neg += prob;
            }
        }
        (pos, neg)
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for p in [0.05, 0.1, 0.3, 0.5, 0.8] {
            for n in [2, 3, 4, 8, 10] {
                let (a, b, _) = closed_form_sign_probs(p, n).unwrap();
                let (ea, eb) = enumerate(p, n);
                assert!((a - ea).abs() < 1e-14 && (b - eb).abs() < 1e-14, "p {p} n {n}");
            }
        }
    }

    #[test]
    fn ratio_is_at_least_one_and_decreasing_below_half() {
        for n in 3..=16 {
            let mut prev = f64::INFINITY;
            for k in 1..=500 {
                let p = k as f64 * 0.001;
                let (_, _, r) = closed_form_sign_probs(p, n).unwrap();
                assert!(r >= 1.0 - 1e-12);
                assert!(r <= prev + 1e-12, "n {n} p {p}");
                prev = r;
            }
        }
        let (_, _, r) = closed_form_sign_probs(0.01, 2).unwrap();
        assert!(r >= 1.0 - 1e-12);
    }

    #[test]
    fn monte_carlo_single_group_support() {
        let est = monte_carlo_sign_probs(0.4, 5, 1, 3).unwrap();
        for f in [est.p_pos_hat, est.p_neg_hat] {
            assert!((0..=5).any(|k| f == k as f64 / 5.0));
        }
        assert!(monte_carlo_sign_probs(0.4, 5, 0, 3).is_err());
    }

    #[test]
    fn monte_carlo_symmetric_case() {
        let est = monte_carlo_sign_probs(0.5, 8, 200_000, 1).unwrap();
        let se = libm::sqrt(est.se_pos * est.se_pos + est.se_neg * est.se_neg);
        assert!((est.p_pos_hat - est.p_neg_hat).abs() <= 4.0 * se);
    }

    fn two_response_batch(len_a: usize, len_b: usize, rewards: [f64; 2]) -> Batch {
        let lp = libm::log(0.25);
        let a = Trajectory::new(0, vec![Token(1); len_a], vec![lp; len_a], 16).unwrap();
        let b = Trajectory::new(0, vec![Token(2); len_b], vec![lp; len_b], 16).unwrap();
        Batch::new(vec![Group::new(0, None, vec![a, b], rewards.to_vec()).unwrap()]).unwrap()
    }

    #[test]
    fn balance_sentinel_and_perfect_balance() {
        let config = TrainConfig::desk().with_variant(EstimatorVariant::AHpo);
        let policy = TabularPolicy::uniform(1, 4, 16, Conditioning::Position).unwrap();

        let batch = two_response_batch(3, 3, [1.0, 0.0]);
        let (sets, _) = batch_advantage_sets(&batch, &config).unwrap();
        let terms = surrogate_terms(&batch, &sets, &batch_logprobs(&batch, &policy).unwrap(), 0.2).unwrap();
        let stats = surrogate_balance(&batch, &sets, &terms, &config).unwrap();
        assert!(stats.rho_defined);
        assert_eq!(stats.rho, 1.0);
        stats.validate().unwrap();

        let only_pos = AdvantageSet::new(vec![0.5, 0.0], vec![1.0, 1.0], 1.0, Estimator::GrpoStandardized).unwrap();
        let terms = surrogate_terms(&batch, std::slice::from_ref(&only_pos), &batch_logprobs(&batch, &policy).unwrap(), 0.2).unwrap();
        let stats = surrogate_balance(&batch, &[only_pos], &terms, &config).unwrap();
        assert!(!stats.rho_defined);
        assert_eq!(stats.rho, f64::INFINITY);
        assert_eq!((stats.n_pos, stats.n_neg, stats.n_zero), (1, 0, 1));
    }

    #[test]
    fn balance_at_old_policy_reduces_to_advantages() {
        // [1, 0, 0, 0]: (0.25 * 0.75) / (0.75 * 0.25) = 1
        let lp = libm::log(0.25);
        let trajs = (0..4)
            .map(|i| Trajectory::new(0, vec![Token(1); i + 1], vec![lp; i + 1], 8).unwrap())
            .collect();
        let batch = Batch::new(vec![Group::new(0, None, trajs, vec![1.0, 0.0, 0.0, 0.0]).unwrap()]).unwrap();
        let config = TrainConfig::desk().with_variant(EstimatorVariant::AHpo);
        let policy = TabularPolicy::uniform(1, 4, 8, Conditioning::Position).unwrap();
        let (sets, _) = batch_advantage_sets(&batch, &config).unwrap();
        let terms = surrogate_terms(&batch, &sets, &batch_logprobs(&batch, &policy).unwrap(), 0.2).unwrap();
        let stats = surrogate_balance(&batch, &sets, &terms, &config).unwrap();
        assert_eq!((stats.m_pos, stats.m_neg), (0.75, 0.25));
        assert!((stats.rho - 1.0).abs() < 1e-15);
        assert_eq!(stats.alpha_adaptive, 0.4);
    }

    #[test]
    fn norm_ratio_sentinels() {
        let config = TrainConfig::desk().with_variant(EstimatorVariant::AHpo);
        let policy = TabularPolicy::uniform(1, 4, 16, Conditioning::Position).unwrap();
        let lp = libm::log(0.25);
        let t = Trajectory::new(0, vec![Token(1), Token(3)], vec![lp; 2], 16).unwrap();
        let batch = Batch::new(vec![Group::new(0, None, vec![t.clone(), t], vec![1.0, 0.0]).unwrap()]).unwrap();
        let (sets, _) = batch_advantage_sets(&batch, &config).unwrap();
        assert_eq!(exact_gradient_norm_ratio(&batch, &sets, &policy, &config).unwrap(), 1.0);

        let only_pos = AdvantageSet::new(vec![0.5, 0.0], vec![1.0, 1.0], 1.0, Estimator::GrpoStandardized).unwrap();
        assert_eq!(
            exact_gradient_norm_ratio(&batch, &[only_pos], &policy, &config).unwrap(),
            f64::INFINITY
        );
    }
}
