//! Flat `key = value` run configuration.
//!
//! ```text
//! # Countdown-3-mini, A-HPO
//! estimator_variant = a_hpo
//! steps = 300
//! number_max = 9
//! ```
//!
//! Every key of [`TrainConfig`] is accepted under its field name, next to the
//! task, initialization and checkpoint keys below. Unless `normalization` is
//! given explicitly it follows the estimator variant.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hpo_core::config::OptimizerKind;
use hpo_core::policy::Conditioning;
use hpo_core::{EstimatorVariant, Normalization, TrainConfig};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Countdown,
    Bernoulli,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Countdown => "countdown",
            TaskKind::Bernoulli => "bernoulli",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Uniform,
    /// Countdown only: logits biased towards `\boxed{ n op n op n }`.
    FormatPrior,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::Uniform => "uniform",
            InitKind::FormatPrior => "format_prior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub train: TrainConfig,
    pub task: TaskKind,
    /// Countdown dataset file; generated from the fields below when absent.
    pub dataset: Option<PathBuf>,
    pub num_prompts: usize,
    pub num_numbers: usize,
    pub number_min: i64,
    pub number_max: i64,
    pub target_min: i64,
    pub target_max: i64,
    pub dataset_seed: u64,
    pub integer_only: bool,
    pub init: InitKind,
    pub init_bias: f64,
    pub conditioning: Conditioning,
    /// Bernoulli task vocabulary.
    pub vocab_size: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub ramp_steps: usize,
    /// Checkpoint every this many steps; 0 keeps only the first and last.
    pub checkpoint_interval: usize,
    normalization_explicit: bool,
}

impl Default for LabConfig {
    /// Countdown-3-mini: 50 prompts over numbers 1..=9, format-prior
    /// initialization, Adam on the logits.
    fn default() -> Self {
        let mut train = TrainConfig::desk();
        train.optimizer = OptimizerKind::Adam;
        train.learning_rate = 0.05;
        Self {
            train,
            task: TaskKind::Countdown,
            dataset: None,
            num_prompts: 50,
            num_numbers: 3,
            number_min: 1,
            number_max: 9,
            target_min: 1,
            target_max: 100,
            dataset_seed: 0,
            integer_only: false,
            init: InitKind::FormatPrior,
            init_bias: 4.0,
            conditioning: Conditioning::Position,
            vocab_size: 8,
            p_start: 0.1,
            p_end: 0.6,
            ramp_steps: 300,
            checkpoint_interval: 100,
            normalization_explicit: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| LabError::BadValue {
        key: key.to_string(),
        message: format!("`{value}`: {e}"),
    })
}

fn parse_tag<T>(key: &str, value: &str, parse: impl Fn(&str) -> Option<T>, allowed: &str) -> Result<T> {
    parse(value).ok_or_else(|| LabError::BadValue {
        key: key.to_string(),
        message: format!("`{value}` is not one of {allowed}"),
    })
}

impl LabConfig {
    /// Reads a config file and applies `overrides` (`key=value`) on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text, &path.display().to_string())?;
        config.apply_overrides(overrides)?;
        config.finish()
    }

    /// Defaults plus overrides, without a file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        let mut config = Self::default();
        config.apply_overrides(overrides)?;
        config.finish()
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::parse(origin, n + 1, format!("expected key = value, got `{line}`")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| LabError::Usage(format!("override `{o}` is not KEY=VALUE")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Resolves the default normalization and validates the result.
    pub fn finish(mut self) -> Result<Self> {
        if !self.normalization_explicit {
            self.train.normalization = self.train.estimator_variant.canonical_normalization();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "clip_epsilon" => t.clip_epsilon = parse_value(key, value)?,
            "rollouts_train" => t.rollouts_train = parse_value(key, value)?,
            "rollouts_eval" => t.rollouts_eval = parse_value(key, value)?,
            "batch_prompts" => t.batch_prompts = parse_value(key, value)?,
            "temperature_train" => t.temperature_train = parse_value(key, value)?,
            "temperature_eval" => t.temperature_eval = parse_value(key, value)?,
            "top_p" => t.top_p = parse_value(key, value)?,
            "max_tokens" => t.max_tokens = parse_value(key, value)?,
            "alpha_min" => t.alpha_min = parse_value(key, value)?,
            "alpha_fixed" => {
                t.alpha_fixed = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "sign_eps" => t.sign_eps = parse_value(key, value)?,
            "std_eps" => t.std_eps = parse_value(key, value)?,
            "estimator_variant" => {
                t.estimator_variant =
                    parse_tag(key, value, EstimatorVariant::parse, "grpo, hpo_fixed, a_hpo, n_hpo, v_hpo")?
            }
            "normalization" => {
                t.normalization = parse_tag(key, value, Normalization::parse, "per_response, mean_length")?;
                self.normalization_explicit = true;
            }
            "v_hpo_alpha0" => t.v_hpo_alpha0 = parse_value(key, value)?,
            "v_hpo_alpha1" => t.v_hpo_alpha1 = parse_value(key, value)?,
            "v_hpo_eps" => t.v_hpo_eps = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "steps" => t.steps = parse_value(key, value)?,
            "inner_epochs" => t.inner_epochs = parse_value(key, value)?,
            "optimizer" => t.optimizer = parse_tag(key, value, OptimizerKind::parse, "sgd, adam")?,
            "adam_beta1" => t.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => t.adam_eps = parse_value(key, value)?,
            "task" => {
                self.task = parse_tag(
                    key,
                    value,
                    |v| match v {
                        "countdown" => Some(TaskKind::Countdown),
                        "bernoulli" => Some(TaskKind::Bernoulli),
                        _ => None,
                    },
                    "countdown, bernoulli",
                )?
            }
            "dataset" => {
                self.dataset = match value {
                    "none" | "" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "num_prompts" => self.num_prompts = parse_value(key, value)?,
            "num_numbers" => self.num_numbers = parse_value(key, value)?,
            "number_min" => self.number_min = parse_value(key, value)?,
            "number_max" => self.number_max = parse_value(key, value)?,
            "target_min" => self.target_min = parse_value(key, value)?,
            "target_max" => self.target_max = parse_value(key, value)?,
            "dataset_seed" => self.dataset_seed = parse_value(key, value)?,
            "integer_only" => self.integer_only = parse_value(key, value)?,
            "init" => {
                self.init = parse_tag(
                    key,
                    value,
                    |v| match v {
                        "uniform" => Some(InitKind::Uniform),
                        "format_prior" => Some(InitKind::FormatPrior),
                        _ => None,
                    },
                    "uniform, format_prior",
                )?
            }
            "init_bias" => self.init_bias = parse_value(key, value)?,
            "conditioning" => {
                self.conditioning = parse_tag(key, value, Conditioning::parse, "position, prefix_bigram")?
            }
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "p_start" => self.p_start = parse_value(key, value)?,
            "p_end" => self.p_end = parse_value(key, value)?,
            "ramp_steps" => self.ramp_steps = parse_value(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, value)?,
            _ => return Err(LabError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |key: &str, message: String| {
            Err(LabError::BadValue {
                key: key.to_string(),
                message,
            })
        };
        if self.task == TaskKind::Countdown {
            if self.dataset.is_none() && self.num_prompts == 0 {
                return bad("num_prompts", "must be positive".into());
            }
            if !(3..=4).contains(&self.num_numbers) {
                return bad("num_numbers", format!("{} is not 3 or 4", self.num_numbers));
            }
            if self.number_min < hpo_core::tasks::countdown::MIN_NUMBER
                || self.number_max > hpo_core::tasks::countdown::MAX_NUMBER
                || self.number_min > self.number_max
            {
                return bad(
                    "number_max",
                    format!("range [{}, {}] outside [1, 20]", self.number_min, self.number_max),
                );
            }
            if self.target_min > self.target_max {
                return bad("target_max", "target_min exceeds target_max".into());
            }
            if self.init == InitKind::FormatPrior && self.conditioning != Conditioning::Position {
                return bad("init", "format_prior needs position conditioning".into());
            }
        } else {
            if self.num_prompts == 0 {
                return bad("num_prompts", "must be positive".into());
            }
            if self.vocab_size < 2 {
                return bad("vocab_size", "must be at least 2".into());
            }
            for (key, p) in [("p_start", self.p_start), ("p_end", self.p_end)] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(key, format!("{p} outside [0, 1]"));
                }
            }
            if self.init == InitKind::FormatPrior {
                return bad("init", "format_prior applies to the countdown task only".into());
            }
        }
        if !self.init_bias.is_finite() {
            return bad("init_bias", "must be finite".into());
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order; feeding these
    /// back through [`LabConfig::set`] reproduces the configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        vec![
            ("task", self.task.name().to_string()),
            ("estimator_variant", t.estimator_variant.name().to_string()),
            ("normalization", t.normalization.name().to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("optimizer", t.optimizer.name().to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("clip_epsilon", t.clip_epsilon.to_string()),
            ("rollouts_train", t.rollouts_train.to_string()),
            ("rollouts_eval", t.rollouts_eval.to_string()),
            ("batch_prompts", t.batch_prompts.to_string()),
            ("temperature_train", t.temperature_train.to_string()),
            ("temperature_eval", t.temperature_eval.to_string()),
            ("top_p", t.top_p.to_string()),
            ("max_tokens", t.max_tokens.to_string()),
            ("alpha_min", t.alpha_min.to_string()),
            (
                "alpha_fixed",
                t.alpha_fixed.map_or_else(|| "none".to_string(), |a| a.to_string()),
            ),
            ("sign_eps", t.sign_eps.to_string()),
            ("std_eps", t.std_eps.to_string()),
            ("v_hpo_alpha0", t.v_hpo_alpha0.to_string()),
            ("v_hpo_alpha1", t.v_hpo_alpha1.to_string()),
            ("v_hpo_eps", t.v_hpo_eps.to_string()),
            ("seed", t.seed.to_string()),
            ("steps", t.steps.to_string()),
            ("inner_epochs", t.inner_epochs.to_string()),
            (
                "dataset",
                self.dataset
                    .as_ref()
                    .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
            ),
            ("num_prompts", self.num_prompts.to_string()),
            ("num_numbers", self.num_numbers.to_string()),
            ("number_min", self.number_min.to_string()),
            ("number_max", self.number_max.to_string()),
            ("target_min", self.target_min.to_string()),
            ("target_max", self.target_max.to_string()),
            ("dataset_seed", self.dataset_seed.to_string()),
            ("integer_only", self.integer_only.to_string()),
            ("init", self.init.name().to_string()),
            ("init_bias", self.init_bias.to_string()),
            ("conditioning", self.conditioning.name().to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("p_start", self.p_start.to_string()),
            ("p_end", self.p_end.to_string()),
            ("ramp_steps", self.ramp_steps.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
        ]
    }

    /// The configuration as a config file.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = LabConfig::default();
        c.apply_text("# header\n\nsteps = 7   # trailing\n  seed=3\n", "test").unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.seed, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = LabConfig::from_overrides(&strings(&["stepz=3"])).unwrap_err();
        assert!(matches!(&err, LabError::UnknownKey { key } if key == "stepz"));
        assert!(err.to_string().contains("stepz"));
    }

    #[test]
    fn missing_equals_reports_line() {
        let mut c = LabConfig::default();
        let err = c.apply_text("steps = 1\nbroken\n", "x.cfg").unwrap_err();
        assert_eq!(err.to_string(), "x.cfg:2: expected key = value, got `broken`");
    }

    #[test]
    fn normalization_follows_variant_unless_set() {
        let c = LabConfig::from_overrides(&strings(&["estimator_variant=grpo"])).unwrap();
        assert_eq!(c.train.normalization, Normalization::PerResponse);
        let c = LabConfig::from_overrides(&strings(&["estimator_variant=n_hpo"])).unwrap();
        assert_eq!(c.train.normalization, Normalization::PerResponse);
        let c = LabConfig::from_overrides(&strings(&["estimator_variant=hpo_fixed", "alpha_fixed=0.5"])).unwrap();
        assert_eq!(c.train.normalization, Normalization::MeanLength);
        let c = LabConfig::from_overrides(&strings(&["normalization=mean_length", "estimator_variant=grpo"])).unwrap();
        assert_eq!(c.train.normalization, Normalization::MeanLength);
    }

    #[test]
    fn bad_values() {
        for o in ["steps=-1", "estimator_variant=ppo", "top_p=abc", "integer_only=yes"] {
            let err = LabConfig::from_overrides(&strings(&[o])).unwrap_err();
            assert!(matches!(err, LabError::BadValue { .. }), "{o}: {err}");
        }
        assert!(LabConfig::from_overrides(&strings(&["estimator_variant=hpo_fixed"])).is_err());
        assert!(LabConfig::from_overrides(&strings(&["number_max=25"])).is_err());
        assert!(LabConfig::from_overrides(&strings(&["task=bernoulli"])).is_err());
        assert!(LabConfig::from_overrides(&strings(&["task=bernoulli", "init=uniform"])).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let c = LabConfig::from_overrides(&strings(&[
            "estimator_variant=v_hpo",
            "learning_rate=0.3",
            "alpha_fixed=0.25",
            "normalization=per_response",
            "dataset=/tmp/d.tsv",
        ]))
        .unwrap();
        let mut back = LabConfig::default();
        back.apply_text(&c.to_text(), "round trip").unwrap();
        let back = back.finish().unwrap();
        assert_eq!(back, c);
    }
}
