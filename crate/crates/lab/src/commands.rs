//! The work behind the `sweep-alpha`, `oracle` and `diagnose` subcommands,
//! returning structured results so callers decide how to print them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hpo_core::advantage::batch_advantage_sets;
use hpo_core::analytics::{
    closed_form_sign_probs, exact_gradient_norm_ratio, monte_carlo_sign_probs, surrogate_balance,
    SignFrequencyEstimate,
};
use hpo_core::objective::{batch_logprobs, decomposition_residual, surrogate_terms};
use hpo_core::policy::TabularPolicy;
use hpo_core::trainer::{collect_batch, TrainState};
use hpo_core::{Batch, BatchStats, EstimatorVariant};

use crate::error::{LabError, Result};
use crate::formats::{parse_metrics, write_batch_stats};
use crate::run::{build_task, run_training};
use crate::settings::LabConfig;

// ---------------------------------------------------------------------------
// Sweeps over the fixed negative weight

/// One run of a sweep: a fixed weight or one of the two baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepArm {
    Fixed(f64),
    Adaptive,
    Grpo,
}

impl SweepArm {
    /// Value written to the combined table's `alpha` column.
    pub fn label(&self) -> String {
        match self {
            SweepArm::Fixed(a) => a.to_string(),
            SweepArm::Adaptive => "a_hpo".into(),
            SweepArm::Grpo => "grpo".into(),
        }
    }

    fn dir_name(&self) -> String {
        match self {
            SweepArm::Fixed(a) => format!("alpha_{a}"),
            other => other.label(),
        }
    }

    fn configure(&self, base: &LabConfig) -> Result<LabConfig> {
        let mut c = base.clone();
        match self {
            SweepArm::Fixed(a) => {
                c.set("estimator_variant", "hpo_fixed")?;
                c.train.alpha_fixed = Some(*a);
            }
            SweepArm::Adaptive => c.set("estimator_variant", "a_hpo")?,
            SweepArm::Grpo => c.set("estimator_variant", "grpo")?,
        }
        c.train.normalization = c.train.estimator_variant.canonical_normalization();
        c.validate()?;
        Ok(c)
    }
}

/// Validates the weights, drops repeats (keeping first occurrences) and
/// appends the two baselines. Returns the arms and the dropped duplicates.
pub fn sweep_arms(alphas: &[f64]) -> Result<(Vec<SweepArm>, Vec<f64>)> {
    let mut arms = Vec::new();
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(LabError::Usage(format!("alpha {a} outside [0, 1]")));
        }
        if kept.contains(&a) {
            dropped.push(a);
        } else {
            kept.push(a);
            arms.push(SweepArm::Fixed(a));
        }
    }
    arms.push(SweepArm::Adaptive);
    arms.push(SweepArm::Grpo);
    Ok((arms, dropped))
}

pub const SWEEP_HEADER: &str = "alpha,step,eval_reward,mean_length";

/// Runs every arm (in parallel threads, one output directory each) with the
/// base configuration's seed, then writes `sweep.csv` combining them in arm
/// order. Returns the combined table.
pub fn sweep_alpha(base: &LabConfig, arms: &[SweepArm], out: &Path, force: bool) -> Result<String> {
    let configs = arms
        .iter()
        .map(|arm| Ok((arm, arm.configure(base)?, out.join(arm.dir_name()))))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(_, config, dir)| s.spawn(move || run_training(config, dir, force).map(|_| ())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(LabError::Usage("sweep worker panicked".into()))))
            .collect()
    });
    for r in results {
        r?;
    }
    let mut table = String::from(SWEEP_HEADER);
    table.push('\n');
    for (arm, _, dir) in &configs {
        let path = dir.join("metrics.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        for row in parse_metrics(&text, &path.display().to_string())? {
            let _ = writeln!(table, "{},{},{},{}", arm.label(), row.step, row.eval_reward, row.mean_length);
        }
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, &table).map_err(|e| LabError::io(&path, e))?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// Sign-frequency oracle

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCell {
    pub p: f64,
    pub n: usize,
    pub p_pos: f64,
    pub p_neg: f64,
    pub ratio: f64,
    pub estimate: SignFrequencyEstimate,
}

impl OracleCell {
    /// Largest absolute z-score of the Monte Carlo estimates against the
    /// closed forms. With a vanishing standard error (N = 2 makes the ratio
    /// identically 1) agreement up to rounding counts as zero.
    pub fn max_z(&self) -> f64 {
        let z = |est: f64, exact: f64, se: f64| {
            let d = (est - exact).abs();
            if se > 0.0 {
                d / se
            } else if d <= 1e-12 * exact.abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let e = &self.estimate;
        let mut m = z(e.p_pos_hat, self.p_pos, e.se_pos).max(z(e.p_neg_hat, self.p_neg, e.se_neg));
        if self.ratio.is_finite() && e.ratio.is_finite() {
            m = m.max(z(e.ratio, self.ratio, e.se_ratio));
        }
        m
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.max_z() <= sigmas
    }
}

pub fn oracle(p_grid: &[f64], n_grid: &[usize], num_groups: usize, seed: u64) -> Result<Vec<OracleCell>> {
    if num_groups == 0 {
        return Err(LabError::Usage("num_groups must be positive".into()));
    }
    if p_grid.is_empty() || n_grid.is_empty() {
        return Err(LabError::Usage("p and N grids must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for &p in p_grid {
        for &n in n_grid {
            let (p_pos, p_neg, ratio) = closed_form_sign_probs(p, n)?;
            let estimate = monte_carlo_sign_probs(p, n, num_groups, seed)?;
            cells.push(OracleCell {
                p,
                n,
                p_pos,
                p_neg,
                ratio,
                estimate,
            });
        }
    }
    Ok(cells)
}

pub fn oracle_table(cells: &[OracleCell]) -> String {
    let mut s = String::from("p,N,p_pos,p_pos_hat,se_pos,p_neg,p_neg_hat,se_neg,ratio,ratio_hat,se_ratio,max_z\n");
    for c in cells {
        let e = &c.estimate;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.2e},{:.6},{:.6},{:.2e},{:.4},{:.4},{:.2e},{:.2}",
            c.p, c.n, c.p_pos, e.p_pos_hat, e.se_pos, c.p_neg, e.p_neg_hat, e.se_neg, c.ratio, e.ratio, e.se_ratio,
            c.max_z()
        );
    }
    s
}

// ---------------------------------------------------------------------------
// Diagnostics of one batch under a saved policy

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub batch: Batch,
    pub stats: BatchStats,
    pub alpha_used: Vec<f64>,
    pub gradient_norm_ratio: f64,
    pub decomposition_residual: f64,
}

impl Diagnosis {
    pub fn report(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "groups={} responses={} mean_length={} mean_reward={}",
            self.batch.groups().len(), self.batch.num_responses(), self.batch.mean_length(), self.batch.mean_reward());
        let _ = writeln!(out, "n_pos={} n_neg={} n_zero={}", s.n_pos, s.n_neg, s.n_zero);
        let _ = writeln!(out, "p_pos={} p_neg={}", s.p_pos, s.p_neg);
        let _ = writeln!(out, "alpha_adaptive={}", s.alpha_adaptive);
        let mut alphas = self.alpha_used.clone();
        alphas.dedup();
        let alphas: Vec<String> = alphas.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "alpha_used={}", alphas.join(","));
        let rho = if s.rho_defined { s.rho.to_string() } else { "inf (no negative contribution)".into() };
        let _ = writeln!(out, "rho={rho}");
        let ratio = if self.gradient_norm_ratio.is_nan() {
            "undefined (both components vanish)".to_string()
        } else if self.gradient_norm_ratio.is_infinite() {
            "inf (negative component vanishes)".to_string()
        } else {
            self.gradient_norm_ratio.to_string()
        };
        let _ = writeln!(out, "grad_norm_ratio={ratio}");
        let _ = writeln!(out, "decomposition_residual={:e}", self.decomposition_residual);
        out.push_str(&write_batch_stats(s));
        out
    }
}

/// Collects one batch from `policy` at step 0 of the configured seed and
/// measures sign statistics, balance and the gradient decomposition.
pub fn diagnose(config: &LabConfig, policy: TabularPolicy) -> Result<Diagnosis> {
    let task = build_task(config)?;
    let train = &config.train;
    let mut state = TrainState::new(policy, train);
    let batch = collect_batch(&mut state, task.env(), train)?;
    let (sets, _) = batch_advantage_sets(&batch, train)?;
    let lps = batch_logprobs(&batch, &state.policy)?;
    let terms = surrogate_terms(&batch, &sets, &lps, train.clip_epsilon)?;
    let stats = surrogate_balance(&batch, &sets, &terms, train)?;
    let gradient_norm_ratio = exact_gradient_norm_ratio(&batch, &sets, &state.policy, train)?;
    let decomposition_residual = decomposition_residual(&batch, &sets, &state.policy, train)?;
    Ok(Diagnosis {
        alpha_used: sets.iter().map(|s| s.alpha_used()).collect(),
        batch,
        stats,
        gradient_norm_ratio,
        decomposition_residual,
    })
}

/// Output root: `--out`, else `$HPO_LAB_OUT/<name>`, else `runs/<name>`.
pub fn resolve_out(out: Option<PathBuf>, env_root: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| env_root.unwrap_or_else(|| PathBuf::from("runs")).join(name))
}

/// Default run directory name for a configuration.
pub fn run_name(variant: EstimatorVariant, seed: u64) -> String {
    format!("{}_seed{seed}", variant.name())
}
