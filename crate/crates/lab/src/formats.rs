//! Text file formats: Countdown datasets, policy checkpoints, batches and
//! batch statistics, and the metrics CSV.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader here recovers the written values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use hpo_core::policy::{Conditioning, TabularPolicy};
use hpo_core::tasks::CountdownInstance;
use hpo_core::trainer::StepRecord;
use hpo_core::{Batch, BatchStats, Group, Token, Trajectory};

use crate::error::{LabError, Result};

// ---------------------------------------------------------------------------
// Countdown datasets: `prompt_id<TAB>n1,n2,n3<TAB>target`

pub fn write_dataset(instances: &[CountdownInstance]) -> String {
    let mut s = String::new();
    for i in instances {
        let numbers: Vec<String> = i.numbers.iter().map(i64::to_string).collect();
        let _ = writeln!(s, "{}\t{}\t{}", i.prompt_id, numbers.join(","), i.target);
    }
    s
}

pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<CountdownInstance>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |m: String| LabError::parse(origin, n + 1, m);
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, numbers, target] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let id: u32 = id.parse().map_err(|e| err(format!("prompt_id `{id}`: {e}")))?;
        let numbers = numbers
            .split(',')
            .map(|x| x.parse::<i64>().map_err(|e| err(format!("number `{x}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let target: i64 = target.parse().map_err(|e| err(format!("target `{target}`: {e}")))?;
        out.push(CountdownInstance::new(id, numbers, target).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<CountdownInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Policy checkpoints

const CHECKPOINT_MAGIC: &str = "# hpo-lab tabular policy";

/// Header lines followed by one `prompt_id context token_id logit` record
/// per parameter. The context column is the position for position
/// conditioning and the previous token id for prefix-bigram conditioning.
pub fn write_checkpoint(policy: &TabularPolicy) -> String {
    let v = policy.vocab_size();
    let mut s = String::with_capacity(policy.params().len() * 16);
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(s, "vocab_size={v}");
    let _ = writeln!(s, "max_tokens={}", policy.max_tokens());
    let _ = writeln!(s, "num_prompts={}", policy.num_prompts());
    let _ = writeln!(s, "conditioning={}", policy.conditioning().name());
    for p in 0..policy.num_prompts() {
        for c in 0..policy.num_contexts() {
            let off = policy.row_offset(p, c);
            for (t, logit) in policy.params()[off..off + v].iter().enumerate() {
                let _ = writeln!(s, "{p} {c} {t} {logit}");
            }
        }
    }
    s
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<TabularPolicy> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, CHECKPOINT_MAGIC)) => {}
        _ => return Err(LabError::parse(origin, 1, "not a policy checkpoint")),
    }
    let mut header = |name: &str| -> Result<String> {
        let (n, line) = lines
            .next()
            .ok_or_else(|| LabError::parse(origin, 0, format!("missing header `{name}`")))?;
        line.strip_prefix(name)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| LabError::parse(origin, n + 1, format!("expected `{name}=...`, got `{line}`")))
    };
    let num = |s: String, line: &str| -> Result<usize> {
        s.parse()
            .map_err(|e| LabError::parse(origin, 0, format!("{line}: {e}")))
    };
    let vocab_size = num(header("vocab_size")?, "vocab_size")?;
    let max_tokens = num(header("max_tokens")?, "max_tokens")?;
    let num_prompts = num(header("num_prompts")?, "num_prompts")?;
    let cond = header("conditioning")?;
    let conditioning = Conditioning::parse(&cond)
        .ok_or_else(|| LabError::parse(origin, 5, format!("unknown conditioning `{cond}`")))?;

    let mut policy = TabularPolicy::uniform(num_prompts, vocab_size, max_tokens, conditioning)
        .map_err(|e| LabError::parse(origin, 0, e.to_string()))?;
    let contexts = policy.num_contexts();
    let mut seen = vec![false; policy.params().len()];
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |m: String| LabError::parse(origin, n + 1, m);
        let fields: Vec<&str> = line.split(' ').collect();
        let [p, c, t, logit] = fields[..] else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        let idx = |s: &str, bound: usize, what: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|e| err(format!("{what} `{s}`: {e}")))?;
            if v >= bound {
                return Err(err(format!("{what} {v} out of range (< {bound})")));
            }
            Ok(v)
        };
        let (p, c, t) = (idx(p, num_prompts, "prompt_id")?, idx(c, contexts, "context")?, idx(t, vocab_size, "token_id")?);
        let logit: f64 = logit.parse().map_err(|e| err(format!("logit `{logit}`: {e}")))?;
        if !logit.is_finite() {
            return Err(err(format!("logit {logit} is not finite")));
        }
        let i = policy.row_offset(p, c) + t;
        if seen[i] {
            return Err(err(format!("duplicate record for ({p}, {c}, {t})")));
        }
        seen[i] = true;
        policy.params_mut()[i] = logit;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(LabError::parse(
            origin,
            0,
            format!("{} of {} records missing (first at parameter {missing})", seen.iter().filter(|s| !**s).count(), seen.len()),
        ));
    }
    Ok(policy)
}

pub fn read_checkpoint(path: &Path) -> Result<TabularPolicy> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Batches and batch statistics: one record per line, `field=value` pairs

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// ```text
/// batch groups=2 mean_length=3.5
/// group prompt_id=0 answer=24 rewards=1,0
/// trajectory tokens=27,3,28,0 old_logprobs=-1.2,-0.3,-2,-0.01
/// ...
/// ```
pub fn write_batch(batch: &Batch) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "batch groups={} mean_length={}", batch.groups().len(), batch.mean_length());
    for g in batch.groups() {
        let answer = g.answer().map_or_else(|| "none".to_string(), |a| a.to_string());
        let _ = writeln!(s, "group prompt_id={} answer={answer} rewards={}", g.prompt_id(), join(g.rewards()));
        for t in g.trajectories() {
            let tokens: Vec<u32> = t.tokens().iter().map(|t| t.0).collect();
            let _ = writeln!(s, "trajectory tokens={} old_logprobs={}", join(&tokens), join(t.old_logprobs()));
        }
    }
    s
}

struct Record<'a> {
    kind: &'a str,
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Record<'a> {
    fn parse(line: &'a str) -> Option<Self> {
        let mut parts = line.split(' ');
        let kind = parts.next()?;
        let fields = parts.map(|p| p.split_once('=')).collect::<Option<Vec<_>>>()?;
        Some(Self { kind, fields })
    }

    fn get(&self, name: &str) -> std::result::Result<&'a str, String> {
        self.fields
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("{} record lacks `{name}`", self.kind))
    }

    fn value<T: std::str::FromStr>(&self, name: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(name)?;
        v.parse().map_err(|e| format!("{name} `{v}`: {e}"))
    }

    fn list<T: std::str::FromStr>(&self, name: &str) -> std::result::Result<Vec<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(name)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.parse().map_err(|e| format!("{name} element `{x}`: {e}")))
            .collect()
    }
}

pub fn parse_batch(text: &str, origin: &str) -> Result<Batch> {
    struct Pending {
        prompt_id: u32,
        answer: Option<i64>,
        rewards: Vec<f64>,
        trajectories: Vec<Trajectory>,
        line: usize,
    }
    let finish = |p: Pending| -> Result<Group> {
        Group::new(p.prompt_id, p.answer, p.trajectories, p.rewards)
            .map_err(|e| LabError::parse(origin, p.line, e.to_string()))
    };
    let mut header: Option<(usize, f64)> = None;
    let mut groups = Vec::new();
    let mut pending: Option<Pending> = None;
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |m: String| LabError::parse(origin, n + 1, m);
        let rec = Record::parse(line).ok_or_else(|| err(format!("malformed record `{line}`")))?;
        match rec.kind {
            "batch" if header.is_none() => {
                header = Some((rec.value("groups").map_err(err)?, rec.value("mean_length").map_err(err)?));
            }
            "group" => {
                if let Some(p) = pending.take() {
                    groups.push(finish(p)?);
                }
                let answer = match rec.get("answer").map_err(err)? {
                    "none" => None,
                    a => Some(a.parse().map_err(|e| err(format!("answer `{a}`: {e}")))?),
                };
                pending = Some(Pending {
                    prompt_id: rec.value("prompt_id").map_err(err)?,
                    answer,
                    rewards: rec.list("rewards").map_err(err)?,
                    trajectories: Vec::new(),
                    line: n + 1,
                });
            }
            "trajectory" => {
                let p = pending.as_mut().ok_or_else(|| err("trajectory before any group".into()))?;
                let tokens: Vec<u32> = rec.list("tokens").map_err(err)?;
                let logprobs: Vec<f64> = rec.list("old_logprobs").map_err(err)?;
                let t = Trajectory::new(p.prompt_id, tokens.into_iter().map(Token).collect(), logprobs, usize::MAX)
                    .map_err(|e| err(e.to_string()))?;
                p.trajectories.push(t);
            }
            other => return Err(err(format!("unexpected record `{other}`"))),
        }
    }
    if let Some(p) = pending.take() {
        groups.push(finish(p)?);
    }
    let (count, mean_length) = header.ok_or_else(|| LabError::parse(origin, 1, "missing batch header"))?;
    if count != groups.len() {
        return Err(LabError::parse(origin, 1, format!("header announces {count} groups, found {}", groups.len())));
    }
    let batch = Batch::new(groups).map_err(|e| LabError::parse(origin, 1, e.to_string()))?;
    if batch.mean_length().to_bits() != mean_length.to_bits() {
        return Err(LabError::parse(
            origin,
            1,
            format!("mean_length {mean_length} disagrees with the trajectories ({})", batch.mean_length()),
        ));
    }
    Ok(batch)
}

pub fn write_batch_stats(stats: &BatchStats) -> String {
    format!(
        "batch_stats n_pos={} n_neg={} n_zero={} p_pos={} p_neg={} alpha_adaptive={} m_pos={} m_neg={} rho={} rho_defined={}\n",
        stats.n_pos,
        stats.n_neg,
        stats.n_zero,
        stats.p_pos,
        stats.p_neg,
        stats.alpha_adaptive,
        stats.m_pos,
        stats.m_neg,
        stats.rho,
        stats.rho_defined
    )
}

pub fn parse_batch_stats(text: &str, origin: &str) -> Result<BatchStats> {
    let line = text.lines().find(|l| !l.is_empty()).unwrap_or("");
    let err = |m: String| LabError::parse(origin, 1, m);
    let rec = Record::parse(line).ok_or_else(|| err(format!("malformed record `{line}`")))?;
    if rec.kind != "batch_stats" {
        return Err(err(format!("expected batch_stats record, got `{}`", rec.kind)));
    }
    let stats = BatchStats {
        n_pos: rec.value("n_pos").map_err(err)?,
        n_neg: rec.value("n_neg").map_err(err)?,
        n_zero: rec.value("n_zero").map_err(err)?,
        p_pos: rec.value("p_pos").map_err(err)?,
        p_neg: rec.value("p_neg").map_err(err)?,
        alpha_adaptive: rec.value("alpha_adaptive").map_err(err)?,
        m_pos: rec.value("m_pos").map_err(err)?,
        m_neg: rec.value("m_neg").map_err(err)?,
        rho: rec.value("rho").map_err(err)?,
        rho_defined: rec.value("rho_defined").map_err(err)?,
    };
    stats.validate().map_err(|e| err(e.to_string()))?;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Metrics CSV

pub const METRICS_HEADER: &str =
    "step,estimator,alpha_used,train_reward,eval_reward,mean_length,p_pos,p_neg,rho,grad_norm,objective";

pub fn metrics_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.estimator.name(),
        r.alpha_used,
        r.mean_train_reward,
        r.eval_reward,
        r.mean_length,
        r.p_pos,
        r.p_neg,
        r.rho,
        r.grad_norm,
        r.objective_value
    )
}

/// One parsed metrics row, as read back by sweeps and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub estimator: String,
    pub alpha_used: f64,
    pub train_reward: f64,
    pub eval_reward: f64,
    pub mean_length: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    pub rho: f64,
    pub grad_norm: f64,
    pub objective: f64,
}

pub fn parse_metrics(text: &str, origin: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(LabError::parse(origin, 1, "missing or unexpected metrics header"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let err = |m: String| LabError::parse(origin, n + 2, m);
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(err(format!("expected 11 columns, got {}", f.len())));
            }
            let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|e| err(format!("column {i} `{}`: {e}", f[i]))) };
            Ok(MetricsRow {
                step: f[0].parse().map_err(|e| err(format!("step `{}`: {e}", f[0])))?,
                estimator: f[1].to_string(),
                alpha_used: num(2)?,
                train_reward: num(3)?,
                eval_reward: num(4)?,
                mean_length: num(5)?,
                p_pos: num(6)?,
                p_neg: num(7)?,
                rho: num(8)?,
                grad_norm: num(9)?,
                objective: num(10)?,
            })
        })
        .collect()
}
