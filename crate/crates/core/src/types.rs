//! Data model shared by every stage of the pipeline: sampled responses,
//! prompt groups, per-group advantages, batches and batch diagnostics.
//!
//! All constructors validate their invariants; the structs are immutable
//! afterwards and therefore `Send + Sync` without further synchronization.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Index into a finite vocabulary. Id 0 is reserved for end-of-sequence in
/// every vocabulary used by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Token(pub u32);

impl Token {
    pub const EOS: Token = Token(0);

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_eos(self) -> bool {
        self == Self::EOS
    }
}

/// One sampled response together with the behaviour-policy log-probabilities
/// recorded at sampling time.
///
/// The length counts the terminating end-of-sequence token when one was
/// emitted.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "raw::Trajectory"))]
pub struct Trajectory {
    prompt_id: u32,
    tokens: Vec<Token>,
    old_logprobs: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        prompt_id: u32,
        tokens: Vec<Token>,
        old_logprobs: Vec<f64>,
        max_tokens: usize,
    ) -> Result<Self> {
        if tokens.len() > max_tokens {
            return Err(Error::Invalid(format!(
                "trajectory length {} exceeds max_tokens {max_tokens}",
                tokens.len()
            )));
        }
        Self::unbounded(prompt_id, tokens, old_logprobs)
    }

    fn unbounded(prompt_id: u32, tokens: Vec<Token>, old_logprobs: Vec<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Invalid("trajectory must contain at least one token".into()));
        }
        if tokens.len() != old_logprobs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tokens but {} old log-probabilities",
                tokens.len(),
                old_logprobs.len()
            )));
        }
        if let Some((j, lp)) = old_logprobs
            .iter()
            .enumerate()
            .find(|(_, lp)| !(lp.is_finite() && **lp <= 0.0))
        {
            return Err(Error::Invalid(format!(
                "old log-probability {lp} at token {j} is not a finite value <= 0"
            )));
        }
        Ok(Self {
            prompt_id,
            tokens,
            old_logprobs,
        })
    }

    pub fn prompt_id(&self) -> u32 {
        self.prompt_id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn old_logprobs(&self) -> &[f64] {
        &self.old_logprobs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The N responses sampled for one prompt and their binary rewards.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "raw::Group"))]
pub struct Group {
    prompt_id: u32,
    answer: Option<i64>,
    trajectories: Vec<Trajectory>,
    rewards: Vec<f64>,
}

impl Group {
    pub fn new(
        prompt_id: u32,
        answer: Option<i64>,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if trajectories.len() != rewards.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trajectories but {} rewards",
                trajectories.len(),
                rewards.len()
            )));
        }
        if trajectories.len() < 2 {
            return Err(Error::GroupTooSmall {
                len: trajectories.len(),
            });
        }
        if let Some(r) = rewards.iter().find(|r| **r != 0.0 && **r != 1.0) {
            return Err(Error::Invalid(format!("reward {r} is not binary")));
        }
        if let Some(t) = trajectories.iter().find(|t| t.prompt_id != prompt_id) {
            return Err(Error::Invalid(format!(
                "trajectory for prompt {} placed in group for prompt {prompt_id}",
                t.prompt_id
            )));
        }
        Ok(Self {
            prompt_id,
            answer,
            trajectories,
            rewards,
        })
    }

    pub fn prompt_id(&self) -> u32 {
        self.prompt_id
    }

    pub fn answer(&self) -> Option<i64> {
        self.answer
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Which response-level estimator produced an [`AdvantageSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Estimator {
    GrpoStandardized,
    Centered,
}

/// Response-level advantages for one group plus the hysteretic weights
/// applied to them.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "raw::AdvantageSet"))]
pub struct AdvantageSet {
    advantages: Vec<f64>,
    weights: Vec<f64>,
    alpha_used: f64,
    estimator: Estimator,
}

impl AdvantageSet {
    pub fn new(
        advantages: Vec<f64>,
        weights: Vec<f64>,
        alpha_used: f64,
        estimator: Estimator,
    ) -> Result<Self> {
        if advantages.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} advantages but {} weights",
                advantages.len(),
                weights.len()
            )));
        }
        if !(0.0..=1.0).contains(&alpha_used) {
            return Err(Error::OutOfRange {
                name: "alpha_used",
                value: alpha_used,
            });
        }
        if let Some(a) = advantages.iter().find(|a| !a.is_finite()) {
            return Err(Error::Invalid(format!("advantage {a} is not finite")));
        }
        if estimator == Estimator::Centered {
            let sum: f64 = advantages.iter().sum();
            let scale = advantages.iter().fold(1.0f64, |m, a| m.max(a.abs()));
            if sum.abs() > 1e-12 * advantages.len() as f64 * scale {
                return Err(Error::Invalid(format!(
                    "centered advantages sum to {sum}, expected 0"
                )));
            }
        }
        for (i, (a, w)) in advantages.iter().zip(&weights).enumerate() {
            let expected = if *a >= 0.0 { 1.0 } else { alpha_used };
            if *w != expected {
                return Err(Error::Invalid(format!(
                    "weight {w} at response {i} does not match advantage {a} with alpha {alpha_used}"
                )));
            }
        }
        Ok(Self {
            advantages,
            weights,
            alpha_used,
            estimator,
        })
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha_used(&self) -> f64 {
        self.alpha_used
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// All groups of one optimization batch and their mean response length.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "raw::Batch"))]
pub struct Batch {
    groups: Vec<Group>,
    mean_length: f64,
}

impl Batch {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Invalid("batch must contain at least one group".into()));
        }
        let (total, count) = groups
            .iter()
            .flat_map(|g| g.trajectories.iter())
            .fold((0usize, 0usize), |(s, c), t| (s + t.len(), c + 1));
        Ok(Self {
            groups,
            mean_length: total as f64 / count as f64,
        })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn mean_length(&self) -> f64 {
        self.mean_length
    }

    pub fn num_responses(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn num_tokens(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.trajectories.iter())
            .map(Trajectory::len)
            .sum()
    }

    pub fn mean_reward(&self) -> f64 {
        let total: f64 = self.groups.iter().flat_map(|g| g.rewards.iter()).sum();
        total / self.num_responses() as f64
    }
}

/// Sign statistics and contribution-balance diagnostics of one batch.
///
/// `rho` is `f64::INFINITY` with `rho_defined == false` when the negative
/// contribution `p_neg * m_neg` vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchStats {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
    pub p_pos: f64,
    pub p_neg: f64,
    pub alpha_adaptive: f64,
    pub m_pos: f64,
    pub m_neg: f64,
    pub rho: f64,
    pub rho_defined: bool,
}

impl BatchStats {
    /// Sign counts only; magnitudes and `rho` are left at their neutral values.
    pub fn from_counts(n_pos: usize, n_neg: usize, n_zero: usize, alpha_min: f64, sign_eps: f64) -> Self {
        let (p_pos, p_neg) = sign_frequencies(n_pos, n_neg);
        Self {
            n_pos,
            n_neg,
            n_zero,
            p_pos,
            p_neg,
            alpha_adaptive: crate::advantage::adaptive_alpha(n_pos, n_neg, alpha_min, sign_eps),
            m_pos: 0.0,
            m_neg: 0.0,
            rho: f64::INFINITY,
            rho_defined: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.p_pos, self.p_neg) != sign_frequencies(self.n_pos, self.n_neg) {
            return Err(Error::Invalid(format!(
                "sign frequencies ({}, {}) inconsistent with counts ({}, {})",
                self.p_pos, self.p_neg, self.n_pos, self.n_neg
            )));
        }
        for (name, v) in [("p_pos", self.p_pos), ("p_neg", self.p_neg), ("alpha_adaptive", self.alpha_adaptive)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        for (name, v) in [("m_pos", self.m_pos), ("m_neg", self.m_neg), ("rho", self.rho)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        Ok(())
    }
}

/// `(p_pos, p_neg)` from strict-sign counts; `(0, 0)` when both are empty.
pub fn sign_frequencies(n_pos: usize, n_neg: usize) -> (f64, f64) {
    let total = n_pos + n_neg;
    if total == 0 {
        return (0.0, 0.0);
    }
    (n_pos as f64 / total as f64, n_neg as f64 / total as f64)
}

#[cfg(feature = "serde")]
mod raw {
    use super::*;

    #[derive(serde::Deserialize)]
    pub struct Trajectory {
        prompt_id: u32,
        tokens: Vec<Token>,
        old_logprobs: Vec<f64>,
    }

    impl TryFrom<Trajectory> for super::Trajectory {
        type Error = Error;
        fn try_from(r: Trajectory) -> Result<Self> {
            super::Trajectory::unbounded(r.prompt_id, r.tokens, r.old_logprobs)
        }
    }

    #[derive(serde::Deserialize)]
    pub struct Group {
        prompt_id: u32,
        answer: Option<i64>,
        trajectories: Vec<super::Trajectory>,
        rewards: Vec<f64>,
    }

    impl TryFrom<Group> for super::Group {
        type Error = Error;
        fn try_from(r: Group) -> Result<Self> {
            super::Group::new(r.prompt_id, r.answer, r.trajectories, r.rewards)
        }
    }

    #[derive(serde::Deserialize)]
    pub struct AdvantageSet {
        advantages: Vec<f64>,
        weights: Vec<f64>,
        alpha_used: f64,
        estimator: Estimator,
    }

    impl TryFrom<AdvantageSet> for super::AdvantageSet {
        type Error = Error;
        fn try_from(r: AdvantageSet) -> Result<Self> {
            super::AdvantageSet::new(r.advantages, r.weights, r.alpha_used, r.estimator)
        }
    }

    #[derive(serde::Deserialize)]
    pub struct Batch {
        groups: Vec<super::Group>,
        mean_length: f64,
    }

    impl TryFrom<Batch> for super::Batch {
        type Error = Error;
        fn try_from(r: Batch) -> Result<Self> {
            let batch = super::Batch::new(r.groups)?;
            if batch.mean_length.to_bits() != r.mean_length.to_bits() {
                return Err(Error::Invalid(format!(
                    "stored mean_length {} differs from recomputed {}",
                    r.mean_length, batch.mean_length
                )));
            }
            Ok(batch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn traj(prompt: u32, len: usize) -> Trajectory {
        Trajectory::new(prompt, vec![Token(1); len], vec![-0.5; len], 32).unwrap()
    }

    #[test]
    fn trajectory_rejects_bad_shapes() {
        assert!(Trajectory::new(0, vec![], vec![], 32).is_err());
        assert!(Trajectory::new(0, vec![Token(1)], vec![], 32).is_err());
        assert!(Trajectory::new(0, vec![Token(1)], vec![0.5], 32).is_err());
        assert!(Trajectory::new(0, vec![Token(1)], vec![f64::NAN], 32).is_err());
        assert!(Trajectory::new(0, vec![Token(1); 3], vec![-1.0; 3], 2).is_err());
        assert_eq!(traj(0, 3).len(), 3);
    }

    #[test]
    fn group_rejects_bad_rewards_and_sizes() {
        assert!(matches!(
            Group::new(0, None, vec![traj(0, 1)], vec![1.0]),
            Err(Error::GroupTooSmall { len: 1 })
        ));
        assert!(Group::new(0, None, vec![traj(0, 1), traj(0, 1)], vec![1.0, 0.5]).is_err());
        assert!(Group::new(0, None, vec![traj(0, 1), traj(1, 1)], vec![1.0, 0.0]).is_err());
        assert!(Group::new(0, None, vec![traj(0, 1), traj(0, 1)], vec![1.0]).is_err());
        assert!(Group::new(0, Some(3), vec![traj(0, 1), traj(0, 1)], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn advantage_set_checks_weights_and_centering() {
        assert!(AdvantageSet::new(vec![0.75, -0.25, -0.25, -0.25], vec![1.0, 0.6, 0.6, 0.6], 0.6, Estimator::Centered).is_ok());
        assert!(AdvantageSet::new(vec![0.75, -0.25], vec![1.0, 0.6], 0.6, Estimator::Centered).is_err());
        assert!(AdvantageSet::new(vec![0.5, -0.5], vec![1.0, 1.0], 0.6, Estimator::Centered).is_err());
        assert!(AdvantageSet::new(vec![0.5, -0.5], vec![1.0, 1.5], 1.5, Estimator::Centered).is_err());
        assert!(AdvantageSet::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.2, Estimator::Centered).is_ok());
    }

    #[test]
    fn batch_mean_length_is_arithmetic_mean() {
        let g1 = Group::new(0, None, vec![traj(0, 2), traj(0, 4)], vec![1.0, 0.0]).unwrap();
        let g2 = Group::new(1, None, vec![traj(1, 3), traj(1, 7)], vec![0.0, 0.0]).unwrap();
        let b = Batch::new(vec![g1, g2]).unwrap();
        assert_eq!(b.mean_length(), 4.0);
        assert_eq!(b.num_responses(), 4);
        assert_eq!(b.num_tokens(), 16);
        assert_eq!(b.mean_reward(), 0.25);
        assert!(Batch::new(vec![]).is_err());
    }

    #[test]
    fn batch_stats_frequencies() {
        let s = BatchStats::from_counts(1, 3, 0, 0.4, 1e-8);
        assert_eq!(s.p_pos, 0.25);
        assert_eq!(s.p_neg, 0.75);
        assert_eq!(s.alpha_adaptive, 0.4);
        s.validate().unwrap();
        let z = BatchStats::from_counts(0, 0, 5, 0.4, 1e-8);
        assert_eq!((z.p_pos, z.p_neg, z.alpha_adaptive), (0.0, 0.0, 1.0));
        z.validate().unwrap();
    }
}
