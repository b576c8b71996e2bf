//! Training runs on disk: environment setup, metrics, checkpoints, manifest
//! and summary.
//!
//! A run directory holds
//!
//! ```text
//! manifest.json          configuration, build, seed, start time, paths
//! dataset.tsv            Countdown runs only
//! metrics.csv            one row per optimizer step
//! checkpoints/step_NNNNNN.ckpt
//! summary.json           final row, wall-clock time, end time
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hpo_core::policy::TabularPolicy;
use hpo_core::tasks::countdown::format_prior_policy;
use hpo_core::tasks::{generate_countdown_dataset, BernoulliEnv, CountdownEnv, CountdownRules, CountdownSpec, Environment};
use hpo_core::trainer::{advance, TrainState};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::formats::{metrics_row, read_dataset, write_checkpoint, write_dataset, METRICS_HEADER};
use crate::settings::{InitKind, LabConfig, TaskKind};

pub enum Task {
    Countdown(CountdownEnv),
    Bernoulli(BernoulliEnv),
}

impl Task {
    pub fn env(&self) -> &dyn Environment {
        match self {
            Task::Countdown(e) => e,
            Task::Bernoulli(e) => e,
        }
    }
}

/// Loads or generates the task the configuration describes.
pub fn build_task(config: &LabConfig) -> Result<Task> {
    match config.task {
        TaskKind::Countdown => {
            let instances = match &config.dataset {
                Some(path) => read_dataset(path)?,
                None => {
                    let mut spec = CountdownSpec::new(config.num_prompts, config.num_numbers);
                    spec.number_min = config.number_min;
                    spec.number_max = config.number_max;
                    spec.target_min = config.target_min;
                    spec.target_max = config.target_max;
                    generate_countdown_dataset(&spec, config.dataset_seed)?
                }
            };
            let rules = CountdownRules {
                integer_only: config.integer_only,
            };
            Ok(Task::Countdown(CountdownEnv::new(instances, rules)?))
        }
        TaskKind::Bernoulli => Ok(Task::Bernoulli(BernoulliEnv {
            num_prompts: config.num_prompts,
            vocab_size: config.vocab_size,
            p_start: config.p_start,
            p_end: config.p_end,
            ramp_steps: config.ramp_steps,
        })),
    }
}

pub fn initial_policy(config: &LabConfig, task: &Task) -> Result<TabularPolicy> {
    let env = task.env();
    let policy = match (config.init, task) {
        (InitKind::FormatPrior, Task::Countdown(cd)) => {
            format_prior_policy(cd.instances(), config.train.max_tokens, config.init_bias)?
        }
        (InitKind::FormatPrior, Task::Bernoulli(_)) => {
            return Err(LabError::BadValue {
                key: "init".into(),
                message: "format_prior applies to the countdown task only".into(),
            })
        }
        (InitKind::Uniform, _) => TabularPolicy::uniform(
            env.num_prompts(),
            env.vocab_size(),
            config.train.max_tokens,
            config.conditioning,
        )?,
    };
    Ok(policy)
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config: serde_json::Map<String, serde_json::Value>,
    pub build: String,
    pub seed: u64,
    pub start_unix_seconds: u64,
    pub desk_learning_rate: f64,
    pub llm_learning_rate: f64,
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub total_steps: usize,
    pub estimator: String,
    pub final_step: Option<serde_json::Value>,
    pub final_eval_reward: Option<f64>,
    pub final_mean_length: Option<f64>,
    pub wall_clock_seconds: f64,
    pub end_unix_seconds: u64,
}

/// Identifies the binary that produced a run.
pub fn build_id() -> String {
    match option_env!("HPO_LAB_BUILD_ID") {
        Some(id) => format!("hpo-lab {} ({id})", env!("CARGO_PKG_VERSION")),
        None => format!("hpo-lab {}", env!("CARGO_PKG_VERSION")),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

pub fn checkpoint_path(out: &Path, step: usize) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

/// Prepares `out` for a fresh run. A directory that already holds files is
/// only reused with `force`, in which case the previous run's artifacts are
/// removed.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)
            .map_err(|e| LabError::io(out, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(LabError::Usage(format!(
                "{} already contains output; pass --force to overwrite",
                out.display()
            )));
        }
        for name in ["manifest.json", "metrics.csv", "summary.json", "dataset.tsv"] {
            let p = out.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| LabError::io(&p, e))?;
            }
        }
        let ck = out.join("checkpoints");
        if ck.exists() {
            fs::remove_dir_all(&ck).map_err(|e| LabError::io(&ck, e))?;
        }
    }
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| LabError::io(out, e))
}

/// Runs `config.train.steps` optimizer steps, writing every artifact under
/// `out`. The metrics CSV and checkpoints depend only on the configuration.
pub fn run_training(config: &LabConfig, out: &Path, force: bool) -> Result<TrainState> {
    let started = Instant::now();
    prepare_out_dir(out, force)?;
    let task = build_task(config)?;
    let policy = initial_policy(config, &task)?;

    let manifest = Manifest {
        config: config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect(),
        build: build_id(),
        seed: config.train.seed,
        start_unix_seconds: unix_now(),
        desk_learning_rate: hpo_core::config::DESK_LEARNING_RATE,
        llm_learning_rate: hpo_core::config::LLM_LEARNING_RATE,
        out_dir: out.to_path_buf(),
        metrics: out.join("metrics.csv"),
        checkpoints: out.join("checkpoints"),
        summary: out.join("summary.json"),
    };
    let manifest_path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path, &(json + "\n"))?;
    if let Task::Countdown(cd) = &task {
        write_file(&out.join("dataset.tsv"), &write_dataset(cd.instances()))?;
    }

    let metrics_path = out.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| LabError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io = |e| LabError::io(&metrics_path, e);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io)?;

    let mut state = TrainState::new(policy, &config.train);
    write_file(&checkpoint_path(out, 0), &write_checkpoint(&state.policy))?;
    for _ in 0..config.train.steps {
        let record = advance(&mut state, task.env(), &config.train)?;
        writeln!(metrics, "{}", metrics_row(&record)).map_err(io)?;
        let interval = config.checkpoint_interval;
        if interval > 0 && state.step.is_multiple_of(interval) {
            write_file(&checkpoint_path(out, state.step), &write_checkpoint(&state.policy))?;
        }
    }
    metrics.flush().map_err(io)?;
    let last = checkpoint_path(out, state.step);
    if !last.exists() {
        write_file(&last, &write_checkpoint(&state.policy))?;
    }

    let final_row = state.history.last();
    let summary = Summary {
        total_steps: state.step,
        estimator: config.train.estimator_variant.name().to_string(),
        final_step: final_row.map(|r| serde_json::to_value(r).expect("step record serializes")),
        final_eval_reward: final_row.map(|r| r.eval_reward),
        final_mean_length: final_row.map(|r| r.mean_length),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        end_unix_seconds: unix_now(),
    };
    let summary_path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&summary_path, &(json + "\n"))?;
    Ok(state)
}
