//! Synthetic environment whose rewards are i.i.d. Bernoulli draws, so the
//! sign statistics of a group follow the closed-form group model exactly.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Group, Token, Trajectory};

/// Distribution of placeholder response lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LengthLaw {
    Fixed(usize),
    /// Uniform over `[lo, hi]`.
    Uniform { lo: usize, hi: usize },
}

impl LengthLaw {
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        match *self {
            LengthLaw::Fixed(n) => n,
            LengthLaw::Uniform { lo, hi } => rng.range_inclusive(lo as i64, hi as i64) as usize,
        }
    }

    fn bounds(&self) -> (usize, usize) {
        match *self {
            LengthLaw::Fixed(n) => (n, n),
            LengthLaw::Uniform { lo, hi } => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliTask {
    pub prompt_id: u32,
    pub success_prob: f64,
    pub length_law: LengthLaw,
    pub max_tokens: usize,
    /// Vocabulary of the uniform reference policy behind the placeholder
    /// log-probabilities.
    pub vocab_size: usize,
}

impl BernoulliTask {
    /// `success_prob` may sit on either end of `[0, 1]`; the degenerate
    /// ends are useful as all-fail / all-pass fixtures.
    pub fn new(
        prompt_id: u32,
        success_prob: f64,
        length_law: LengthLaw,
        max_tokens: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&success_prob) {
            return Err(Error::OutOfRange {
                name: "success_prob",
                value: success_prob,
            });
        }
        let (lo, hi) = length_law.bounds();
        if lo < 1 || hi < lo || hi > max_tokens {
            return Err(Error::Invalid(format!(
                "length law [{lo}, {hi}] must lie within [1, {max_tokens}]"
            )));
        }
        if vocab_size < 2 {
            return Err(Error::Invalid("vocab_size must be at least 2".into()));
        }
        Ok(Self {
            prompt_id,
            success_prob,
            length_law,
            max_tokens,
            vocab_size,
        })
    }
}

/// N i.i.d. Bernoulli rewards with placeholder responses. Each placeholder
/// is a run of token 1 closed by end-of-sequence, carrying the
/// log-probabilities of a uniform reference policy.
pub fn bernoulli_rollout_group(task: &BernoulliTask, n: usize, rng: &mut RngStream) -> Result<Group> {
    if n < 2 {
        return Err(Error::GroupTooSmall { len: n });
    }
    let lp = -libm::log(task.vocab_size as f64);
    let mut trajectories = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        rewards.push(if rng.bernoulli(task.success_prob) { 1.0 } else { 0.0 });
        let len = task.length_law.sample(rng);
        let mut tokens = alloc::vec![Token(1); len];
        tokens[len - 1] = Token::EOS;
        trajectories.push(Trajectory::new(
            task.prompt_id,
            tokens,
            alloc::vec![lp; len],
            task.max_tokens,
        )?);
    }
    Group::new(task.prompt_id, None, trajectories, rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::{centered_advantage, sign_counts};
    use crate::analytics::closed_form_sign_probs;
    use crate::rng::Domain;

    fn task(p: f64) -> BernoulliTask {
        BernoulliTask::new(0, p, LengthLaw::Uniform { lo: 1, hi: 6 }, 8, 4).unwrap()
    }

    #[test]
    fn certain_success() {
        let mut rng = RngStream::new(1, Domain::Test, 0, 0, 0);
        let g = bernoulli_rollout_group(&task(1.0), 8, &mut rng).unwrap();
        assert!(g.rewards().iter().all(|r| *r == 1.0));
        assert!(g.trajectories().iter().all(|t| (1..=6).contains(&t.len())));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = bernoulli_rollout_group(&task(0.3), 8, &mut RngStream::new(4, Domain::Test, 0, 0, 0)).unwrap();
        let b = bernoulli_rollout_group(&task(0.3), 8, &mut RngStream::new(4, Domain::Test, 0, 0, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BernoulliTask::new(0, 1.5, LengthLaw::Fixed(2), 8, 4).is_err());
        assert!(BernoulliTask::new(0, 0.5, LengthLaw::Fixed(0), 8, 4).is_err());
        assert!(BernoulliTask::new(0, 0.5, LengthLaw::Uniform { lo: 2, hi: 9 }, 8, 4).is_err());
        assert!(bernoulli_rollout_group(&task(0.5), 1, &mut RngStream::new(0, Domain::Test, 0, 0, 0)).is_err());
    }

    #[test]
    fn positive_fraction_matches_closed_form() {
        // 100k groups of 8 at p = 0.1; 3 sigma with the group-level
        // standard error of the positive fraction
        let t = task(0.1);
        let groups = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for k in 0..groups {
            let mut rng = RngStream::new(9, Domain::Test, k, 0, 0);
            let g = bernoulli_rollout_group(&t, 8, &mut rng).unwrap();
            let (pos, _, _) = sign_counts(&centered_advantage(g.rewards()).unwrap());
            let x = pos as f64 / 8.0;
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / groups as f64;
        let se = libm::sqrt((sum_sq / groups as f64 - mean * mean) / groups as f64);
        let (p_pos, _, _) = closed_form_sign_probs(0.1, 8).unwrap();
        assert!((mean - p_pos).abs() <= 3.0 * se, "{mean} vs {p_pos} (se {se})");
    }
}
