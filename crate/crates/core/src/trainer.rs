//! Rollout collection, advantage computation and gradient ascent on the
//! clipped surrogate objective.
//!
//! A [`TrainState`] is fully determined by the configuration (including the
//! seed), the environment, the initial policy and the number of steps taken:
//! every random draw comes from a stream keyed by `(seed, step, group,
//! response)`, so no generator state needs to be carried between steps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::advantage::batch_advantage_sets;
use crate::analytics::surrogate_balance;
use crate::config::{EstimatorVariant, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::objective::{batch_logprobs, l2_norm, objective_gradient, surrogate_terms, token_scale};
use crate::policy::TabularPolicy;
use crate::rng::{Domain, RngStream};
use crate::tasks::Environment;
use crate::types::{AdvantageSet, Batch, Group};

/// Per-parameter optimizer accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub updates: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            updates: 0,
        }
    }

    /// One ascent step on `params` along `grad`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], config: &TrainConfig) {
        self.updates += 1;
        match config.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += config.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (config.adam_beta1, config.adam_beta2);
                let c1 = 1.0 - libm::pow(b1, self.updates as f64);
                let c2 = 1.0 - libm::pow(b2, self.updates as f64);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p += config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.adam_eps);
                }
            }
        }
    }
}

/// Deterministic walk through a shuffled prompt order; every epoch is
/// reshuffled from a seed derived from `(seed, epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCursor {
    pub epoch: u64,
    pub index: usize,
    order: Vec<u32>,
}

impl PromptCursor {
    pub fn new(num_prompts: usize, seed: u64) -> Self {
        Self {
            epoch: 0,
            index: 0,
            order: Self::shuffled(num_prompts, seed, 0),
        }
    }

    fn shuffled(num_prompts: usize, seed: u64, epoch: u64) -> Vec<u32> {
        let mut order: Vec<u32> = (0..num_prompts as u32).collect();
        RngStream::new(seed, Domain::DatasetShuffle, epoch, 0, 0).shuffle(&mut order);
        order
    }

    pub fn next(&mut self, seed: u64) -> u32 {
        if self.index == self.order.len() {
            self.epoch += 1;
            self.index = 0;
            self.order = Self::shuffled(self.order.len(), seed, self.epoch);
        }
        let p = self.order[self.index];
        self.index += 1;
        p
    }
}

/// Diagnostics of one optimizer update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: usize,
    pub estimator: EstimatorVariant,
    pub mean_train_reward: f64,
    pub eval_reward: f64,
    pub mean_length: f64,
    pub alpha_used: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    pub rho: f64,
    pub grad_norm: f64,
    /// Objective at the behaviour policy, before the update.
    pub objective_value: f64,
    /// Fraction of clipped tokens, averaged over inner epochs.
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: TabularPolicy,
    pub step: usize,
    pub optimizer: OptimizerState,
    pub cursor: PromptCursor,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(policy: TabularPolicy, config: &TrainConfig) -> Self {
        let n = policy.params().len();
        let prompts = policy.num_prompts();
        Self {
            policy,
            step: 0,
            optimizer: OptimizerState::new(n),
            cursor: PromptCursor::new(prompts, config.seed),
            history: Vec::new(),
        }
    }
}

fn check_env(state: &TrainState, env: &dyn Environment) -> Result<()> {
    if env.num_prompts() == 0 {
        return Err(Error::Invalid("environment has no prompts".into()));
    }
    if env.num_prompts() != state.policy.num_prompts() || env.vocab_size() != state.policy.vocab_size() {
        return Err(Error::ShapeMismatch(format!(
            "environment has {} prompts / vocab {}, policy has {} / {}",
            env.num_prompts(),
            env.vocab_size(),
            state.policy.num_prompts(),
            state.policy.vocab_size()
        )));
    }
    Ok(())
}

/// Samples `batch_prompts` groups of `rollouts_train` responses under the
/// current policy and scores them.
pub fn collect_batch(state: &mut TrainState, env: &dyn Environment, config: &TrainConfig) -> Result<Batch> {
    check_env(state, env)?;
    let seed = config.seed;
    let step = state.step as u64;
    let mut groups = Vec::with_capacity(config.batch_prompts);
    for b in 0..config.batch_prompts {
        let prompt = state.cursor.next(seed);
        let mut trajectories = Vec::with_capacity(config.rollouts_train);
        let mut rewards = Vec::with_capacity(config.rollouts_train);
        for i in 0..config.rollouts_train {
            let mut rng = RngStream::new(seed, Domain::TrainRollout, step, b as u64, i as u64);
            let traj = state.policy.sample_trajectory(
                prompt,
                config.temperature_train,
                config.top_p,
                &mut rng,
            )?;
            let mut reward_rng = RngStream::new(seed, Domain::TaskReward, step, b as u64, i as u64);
            rewards.push(env.reward(prompt, traj.tokens(), state.step, &mut reward_rng));
            trajectories.push(traj);
        }
        groups.push(Group::new(prompt, env.answer(prompt), trajectories, rewards)?);
    }
    Batch::new(groups)
}

fn alpha_summary(config: &TrainConfig, sets: &[AdvantageSet], adaptive: f64) -> f64 {
    match config.estimator_variant {
        EstimatorVariant::Grpo => 1.0,
        EstimatorVariant::HpoFixed => config.alpha_fixed.unwrap_or(1.0),
        EstimatorVariant::AHpo | EstimatorVariant::NHpo => adaptive,
        EstimatorVariant::VHpo => sets.iter().map(AdvantageSet::alpha_used).sum::<f64>() / sets.len() as f64,
    }
}

/// Compact text dump of a batch for divergence reports.
pub fn describe_batch(batch: &Batch, sets: &[AdvantageSet]) -> String {
    let mut s = String::new();
    for (g, (group, set)) in batch.groups().iter().zip(sets).enumerate() {
        let _ = write!(s, "group {g} prompt {}: rewards {:?} lengths {:?} advantages {:?} weights {:?}; ",
            group.prompt_id(),
            group.rewards(),
            group.trajectories().iter().map(|t| t.len()).collect::<Vec<_>>(),
            set.advantages(),
            set.weights());
    }
    s
}

/// Advantages, `inner_epochs` ascent steps against the batch's behaviour
/// policy, and the step's diagnostics. `eval_reward` is left as NaN for
/// the caller to fill.
pub fn train_step(state: &mut TrainState, batch: &Batch, config: &TrainConfig) -> Result<StepRecord> {
    config.validate()?;
    let (sets, stats) = batch_advantage_sets(batch, config)?;
    let diverged = |detail: String| Error::Diverged {
        step: state.step + 1,
        detail,
    };
    let mut first: Option<(f64, f64)> = None;
    let mut clipped_total = 0.0;
    let mut rho = f64::INFINITY;
    for _ in 0..config.inner_epochs {
        let lps = batch_logprobs(batch, &state.policy)?;
        let terms = surrogate_terms(batch, &sets, &lps, config.clip_epsilon)
            .map_err(|e| diverged(format!("{e}; {}", describe_batch(batch, &sets))))?;
        let n_tokens = batch.num_tokens() as f64;
        let clipped = terms.iter().flatten().flatten().filter(|t| t.clipped).count();
        clipped_total += clipped as f64 / n_tokens;
        let grad = objective_gradient(batch, &sets, &state.policy, config)
            .map_err(|e| diverged(format!("{e}; {}", describe_batch(batch, &sets))))?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(diverged(format!(
                "gradient entry {i} is {}; {}",
                grad[i],
                describe_batch(batch, &sets)
            )));
        }
        if first.is_none() {
            let r = batch.num_responses();
            let mut value = 0.0;
            for ((group, set), group_terms) in batch.groups().iter().zip(&sets).zip(&terms) {
                for ((traj, w), response) in group.trajectories().iter().zip(set.weights()).zip(group_terms) {
                    let scale = token_scale(config.normalization, r, batch.mean_length(), traj.len());
                    value += response.iter().map(|t| w * t.surrogate).sum::<f64>() * scale;
                }
            }
            let balance = surrogate_balance(batch, &sets, &terms, config)?;
            rho = balance.rho;
            first = Some((value, l2_norm(&grad)));
        }
        state.optimizer.apply(state.policy.params_mut(), &grad, config);
    }
    let (objective_value, grad_norm) = first.unwrap_or((0.0, 0.0));
    state.step += 1;
    Ok(StepRecord {
        step: state.step,
        estimator: config.estimator_variant,
        mean_train_reward: batch.mean_reward(),
        eval_reward: f64::NAN,
        mean_length: batch.mean_length(),
        alpha_used: alpha_summary(config, &sets, stats.alpha_adaptive),
        p_pos: stats.p_pos,
        p_neg: stats.p_neg,
        rho,
        grad_norm,
        objective_value,
        clip_fraction: clipped_total / config.inner_epochs as f64,
    })
}

/// Mean binary reward over every prompt with `rollouts_eval` samples each
/// at the evaluation temperature. Streams are keyed by the current step.
pub fn evaluate(state: &TrainState, env: &dyn Environment, config: &TrainConfig) -> Result<f64> {
    check_env(state, env)?;
    let step = state.step as u64;
    let mut total = 0.0;
    let mut count = 0usize;
    for prompt in 0..env.num_prompts() as u32 {
        for r in 0..config.rollouts_eval {
            let mut rng = RngStream::new(config.seed, Domain::EvalRollout, step, prompt as u64, r as u64);
            let traj = state
                .policy
                .sample_trajectory(prompt, config.temperature_eval, config.top_p, &mut rng)?;
            // reward streams for evaluation live far above training batch indices
            let mut reward_rng = RngStream::new(config.seed, Domain::TaskReward, step, u64::MAX - prompt as u64, r as u64);
            total += env.reward(prompt, traj.tokens(), state.step, &mut reward_rng);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Collect, update, evaluate; appends the record to the history.
pub fn advance(state: &mut TrainState, env: &dyn Environment, config: &TrainConfig) -> Result<StepRecord> {
    let batch = collect_batch(state, env, config)?;
    let mut record = train_step(state, &batch, config)?;
    record.eval_reward = evaluate(state, env, config)?;
    state.history.push(record.clone());
    Ok(record)
}
