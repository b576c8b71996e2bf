//! Verifiable sparse-reward environments.

pub mod bernoulli;
pub mod boxed;
pub mod countdown;

use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::RngStream;
use crate::types::Token;

pub use bernoulli::{bernoulli_rollout_group, BernoulliTask, LengthLaw};
pub use boxed::parse_boxed;
pub use countdown::{
    countdown_reward, generate_countdown_dataset, CountdownInstance, CountdownRules, CountdownSpec,
};

/// A prompt set with a binary reward on sampled token sequences.
pub trait Environment {
    fn num_prompts(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Ground-truth answer recorded alongside each group.
    fn answer(&self, prompt_id: u32) -> Option<i64>;
    /// Binary reward. `step` and `rng` serve environments whose reward is
    /// itself random or scheduled; deterministic verifiers ignore them.
    fn reward(&self, prompt_id: u32, tokens: &[Token], step: usize, rng: &mut RngStream) -> f64;
}

/// Countdown instances indexed by prompt id.
#[derive(Debug, Clone, PartialEq)]
pub struct CountdownEnv {
    instances: Vec<CountdownInstance>,
    rules: CountdownRules,
}

impl CountdownEnv {
    /// Instances must carry prompt ids `0..len` in order.
    pub fn new(instances: Vec<CountdownInstance>, rules: CountdownRules) -> Result<Self> {
        if instances.is_empty() {
            return Err(crate::Error::Invalid("countdown dataset is empty".into()));
        }
        if let Some((k, i)) = instances.iter().enumerate().find(|(k, i)| i.prompt_id as usize != *k) {
            return Err(crate::Error::Invalid(alloc::format!(
                "instance at row {k} has prompt_id {}, expected {k}",
                i.prompt_id
            )));
        }
        Ok(Self { instances, rules })
    }

    pub fn instances(&self) -> &[CountdownInstance] {
        &self.instances
    }
}

impl Environment for CountdownEnv {
    fn num_prompts(&self) -> usize {
        self.instances.len()
    }

    fn vocab_size(&self) -> usize {
        countdown::vocab::SIZE
    }

    fn answer(&self, prompt_id: u32) -> Option<i64> {
        self.instances.get(prompt_id as usize).map(|i| i.target)
    }

    fn reward(&self, prompt_id: u32, tokens: &[Token], _step: usize, _rng: &mut RngStream) -> f64 {
        match self.instances.get(prompt_id as usize) {
            Some(i) => countdown::countdown_reward_with(i, &countdown::vocab::render(tokens), self.rules),
            None => 0.0,
        }
    }
}

/// Bernoulli rewards whose success probability follows a linear schedule
/// from `p_start` at step 0 to `p_end` at step `ramp_steps`, independent
/// of the sampled tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliEnv {
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub ramp_steps: usize,
}

impl BernoulliEnv {
    pub fn success_prob(&self, step: usize) -> f64 {
        if self.ramp_steps == 0 {
            return self.p_end;
        }
        let t = (step as f64 / self.ramp_steps as f64).min(1.0);
        self.p_start + t * (self.p_end - self.p_start)
    }
}

impl Environment for BernoulliEnv {
    fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn answer(&self, _prompt_id: u32) -> Option<i64> {
        None
    }

    fn reward(&self, _prompt_id: u32, _tokens: &[Token], step: usize, rng: &mut RngStream) -> f64 {
        if rng.bernoulli(self.success_prob(step)) {
            1.0
        } else {
            0.0
        }
    }
}
