use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpo_lab::commands::{diagnose, oracle, oracle_table, resolve_out, run_name, sweep_alpha, sweep_arms};
use hpo_lab::formats::read_checkpoint;
use hpo_lab::run::run_training;
use hpo_lab::{LabConfig, LabError};

#[derive(Parser)]
#[command(name = "hpo-lab", version, about = "Hysteretic policy optimization experiments on desk-scale tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=INT`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Default output root when `--out` is not given.
    #[arg(long, env = "HPO_LAB_OUT", hide = true)]
    out_root: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<LabConfig, LabError> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        match &self.config {
            Some(path) => LabConfig::load(path, &overrides),
            None => LabConfig::from_overrides(&overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write metrics, checkpoints and a summary.
    Run(Common),
    /// Fixed-weight runs for each alpha plus A-HPO and GRPO baselines.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights in [0, 1].
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alphas: Vec<f64>,
    },
    /// Compare Monte Carlo sign frequencies with their closed forms.
    Oracle {
        #[arg(long = "p", value_delimiter = ',', default_value = "0.05,0.1,0.3,0.5")]
        p_grid: Vec<f64>,
        #[arg(long = "n", value_delimiter = ',', default_value = "2,4,8")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        num_groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sign statistics, balance ratio and gradient decomposition of one batch.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Countdown dataset; overrides the config's `dataset` key.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

/// Input and usage problems exit with 2, everything else with 1.
fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::UnknownKey { .. } | LabError::BadValue { .. } | LabError::Parse { .. } | LabError::Usage(_) => 2,
        LabError::Io { .. } | LabError::Core(_) => 1,
    }
}

fn fail(e: LabError, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let config = match common.load() {
                Ok(c) => c,
                Err(e) => return fail(e, 2),
            };
            let name = run_name(config.train.estimator_variant, config.train.seed);
            let out = resolve_out(common.out.clone(), common.out_root.clone(), &name);
            match run_training(&config, &out, common.force) {
                Ok(state) => {
                    let last = state.history.last();
                    println!(
                        "{} steps, final eval reward {}, mean length {}; artifacts in {}",
                        state.step,
                        last.map_or(f64::NAN, |r| r.eval_reward),
                        last.map_or(f64::NAN, |r| r.mean_length),
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    let code = exit_code(&e);
                    fail(e, code)
                }
            }
        }
        Command::SweepAlpha { common, alphas } => {
            let config = match common.load() {
                Ok(c) => c,
                Err(e) => return fail(e, 2),
            };
            let (arms, dropped) = match sweep_arms(&alphas) {
                Ok(a) => a,
                Err(e) => return fail(e, 2),
            };
            for a in dropped {
                eprintln!("warning: duplicate alpha {a} ignored");
            }
            let out = resolve_out(common.out.clone(), common.out_root.clone(), &format!("sweep_seed{}", config.train.seed));
            match sweep_alpha(&config, &arms, &out, common.force) {
                Ok(table) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    let code = exit_code(&e);
                    fail(e, code)
                }
            }
        }
        Command::Oracle {
            p_grid,
            n_grid,
            num_groups,
            seed,
        } => match oracle(&p_grid, &n_grid, num_groups, seed) {
            Ok(cells) => {
                print!("{}", oracle_table(&cells));
                let failing: Vec<_> = cells.iter().filter(|c| !c.within(4.0)).collect();
                if failing.is_empty() {
                    ExitCode::SUCCESS
                } else {
                    for c in failing {
                        eprintln!("outside 4 sigma: p={} N={} (max |z| = {:.2})", c.p, c.n, c.max_z());
                    }
                    ExitCode::from(1)
                }
            }
            Err(e @ LabError::Core(_)) => fail(e, 2),
            Err(e) => {
                let code = exit_code(&e);
                fail(e, code)
            }
        },
        Command::Diagnose {
            common,
            checkpoint,
            dataset,
        } => {
            let mut config = match common.load() {
                Ok(c) => c,
                Err(e) => return fail(e, 2),
            };
            if let Some(d) = dataset {
                config.dataset = Some(d);
            }
            let policy = match read_checkpoint(&checkpoint) {
                Ok(p) => p,
                Err(e) => return fail(e, 2),
            };
            config.train.max_tokens = policy.max_tokens();
            let result = diagnose(&config, policy);
            match result {
                Ok(d) => {
                    print!("{}", d.report());
                    ExitCode::SUCCESS
                }
                Err(e @ (LabError::Io { .. } | LabError::Parse { .. })) => fail(e, 2),
                Err(e) => {
                    let code = exit_code(&e);
                    fail(e, code)
                }
            }
        }
    }
}
