use alloc::format;

use crate::error::{Error, Result};

/// Which advantage estimator and weighting rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EstimatorVariant {
    /// Standardized advantages, unit weights.
    Grpo,
    /// Centered advantages, constant negative weight `alpha_fixed`.
    HpoFixed,
    /// Centered advantages, batch-adaptive negative weight.
    AHpo,
    /// A-HPO weights under per-response length normalization.
    NHpo,
    /// Centered advantages, per-group variance-aware negative weight.
    VHpo,
}

impl EstimatorVariant {
    pub const ALL: [EstimatorVariant; 5] = [
        EstimatorVariant::Grpo,
        EstimatorVariant::HpoFixed,
        EstimatorVariant::AHpo,
        EstimatorVariant::NHpo,
        EstimatorVariant::VHpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorVariant::Grpo => "grpo",
            EstimatorVariant::HpoFixed => "hpo_fixed",
            EstimatorVariant::AHpo => "a_hpo",
            EstimatorVariant::NHpo => "n_hpo",
            EstimatorVariant::VHpo => "v_hpo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// The length normalization each variant is defined with.
    pub fn canonical_normalization(self) -> Normalization {
        match self {
            EstimatorVariant::Grpo | EstimatorVariant::NHpo => Normalization::PerResponse,
            _ => Normalization::MeanLength,
        }
    }
}

/// How token-level surrogate sums are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    /// Each response's token sum divided by its own length.
    PerResponse,
    /// Every token sum divided by the batch mean length.
    MeanLength,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::PerResponse => "per_response",
            Normalization::MeanLength => "mean_length",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_response" => Some(Normalization::PerResponse),
            "mean_length" => Some(Normalization::MeanLength),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    /// Plain gradient ascent: `theta += lr * grad`.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Hyperparameters of the policy-optimization loop.
///
/// [`TrainConfig::default`] carries the LLM-scale values (learning rate
/// 1e-6, clip 0.2, 8 training / 4 evaluation rollouts, 16 prompts per
/// batch, `alpha_min = 0.4`); [`TrainConfig::desk`] overrides the learning
/// rate for tabular logits.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub rollouts_train: usize,
    pub rollouts_eval: usize,
    pub batch_prompts: usize,
    pub temperature_train: f64,
    pub temperature_eval: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub alpha_min: f64,
    pub alpha_fixed: Option<f64>,
    pub sign_eps: f64,
    pub std_eps: f64,
    pub estimator_variant: EstimatorVariant,
    pub normalization: Normalization,
    pub v_hpo_alpha0: f64,
    pub v_hpo_alpha1: f64,
    pub v_hpo_eps: f64,
    pub seed: u64,
    /// Optimizer updates per run.
    pub steps: usize,
    /// Ascent steps per collected batch against the same behaviour policy.
    pub inner_epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

/// Learning rate used for tabular logits.
pub const DESK_LEARNING_RATE: f64 = 1e-1;
/// Learning rate the objective was specified with for LLM weights.
pub const LLM_LEARNING_RATE: f64 = 1e-6;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: LLM_LEARNING_RATE,
            clip_epsilon: 0.2,
            rollouts_train: 8,
            rollouts_eval: 4,
            batch_prompts: 16,
            temperature_train: 1.0,
            temperature_eval: 0.6,
            top_p: 0.95,
            max_tokens: 32,
            alpha_min: 0.4,
            alpha_fixed: None,
            sign_eps: 1e-8,
            std_eps: 1e-6,
            estimator_variant: EstimatorVariant::AHpo,
            normalization: Normalization::MeanLength,
            v_hpo_alpha0: 0.4,
            v_hpo_alpha1: 1e-2,
            v_hpo_eps: 1e-8,
            seed: 0,
            steps: 300,
            inner_epochs: 1,
            optimizer: OptimizerKind::Sgd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: identical to the default except for the
    /// learning rate.
    pub fn desk() -> Self {
        Self {
            learning_rate: DESK_LEARNING_RATE,
            ..Self::default()
        }
    }

    /// Sets the variant together with its canonical normalization.
    pub fn with_variant(mut self, variant: EstimatorVariant) -> Self {
        self.estimator_variant = variant;
        self.normalization = variant.canonical_normalization();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("temperature_train", self.temperature_train),
            ("temperature_eval", self.temperature_eval),
            ("sign_eps", self.sign_eps),
            ("std_eps", self.std_eps),
            ("v_hpo_alpha1", self.v_hpo_alpha1),
            ("v_hpo_eps", self.v_hpo_eps),
            ("adam_eps", self.adam_eps),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::OutOfRange { name, value });
            }
        }
        let unit = [
            ("alpha_min", self.alpha_min),
            ("v_hpo_alpha0", self.v_hpo_alpha0),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { name, value });
            }
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::OutOfRange {
                name: "clip_epsilon",
                value: self.clip_epsilon,
            });
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::OutOfRange {
                name: "top_p",
                value: self.top_p,
            });
        }
        if let Some(a) = self.alpha_fixed {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::OutOfRange {
                    name: "alpha_fixed",
                    value: a,
                });
            }
        }
        if self.estimator_variant == EstimatorVariant::HpoFixed && self.alpha_fixed.is_none() {
            return Err(Error::Config("estimator hpo_fixed requires alpha_fixed".into()));
        }
        if self.rollouts_train < 2 {
            return Err(Error::Config(format!(
                "rollouts_train = {} is too small for relative advantages",
                self.rollouts_train
            )));
        }
        for (name, value) in [
            ("rollouts_eval", self.rollouts_eval),
            ("batch_prompts", self.batch_prompts),
            ("max_tokens", self.max_tokens),
            ("inner_epochs", self.inner_epochs),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
