//! Command-line surface for the harness: run episode batches, grade stored
//! beliefs against exact posteriors, compute rewards and advantages,
//! aggregate reports, and re-verify stored artifacts.
//!
//! Everything except the API key lives in one TOML config file; without
//! `--config` the built-in combination-lock training environment runs
//! against the deterministic oracle backend, so the whole pipeline works
//! offline out of the box.

use abbel::config::HarnessConfig;
use abbel::grading::{build_groups, BeliefParser, GradingOptions, LlmParser, ReferenceParser};
use abbel::metrics;
use abbel::reward;
use abbel::rollout::{self, run_batch, RolloutTask};
use abbel::store;
use abbel::{Regime, Termination, Trajectory};
use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "abbel", version)]
#[command(about = "Run and score language-agent episodes on deterministic guessing games")]
struct Cli {
    /// TOML config file; when absent, the built-in combination-lock training
    /// environment runs against the deterministic oracle backend.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; `run` draws one secret per task from seed, seed+1, ...
    #[arg(long, global = true, default_value_t = 0)]
    seed: i64,

    /// Worker-thread cap, overriding the [rollout] parallelism in the config.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and store one trajectory per line.
    Run {
        /// Context regime: abbel, vanilla, or belief-prompting.
        #[arg(long, default_value = "abbel")]
        regime: Regime,

        /// Number of distinct tasks (consecutive seeds) to run.
        #[arg(long, default_value_t = 10)]
        tasks: usize,

        /// Rollouts per task (the advantage-group size); defaults to the
        /// config's [rollout] rollouts_per_task.
        #[arg(long)]
        rollouts: Option<u32>,

        /// Output trajectory file.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        out: PathBuf,
    },

    /// Grade stored bottleneck beliefs: regenerate each one from its stored
    /// context and score both against the exact posterior.
    Grade {
        /// Trajectory file produced by `run`.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        input: PathBuf,

        /// Output belief-group file.
        #[arg(long, short, default_value = "belief_groups.jsonl")]
        out: PathBuf,

        /// How beliefs are parsed into per-position sets.
        #[arg(long, value_enum, default_value_t = ParserKind::Reference)]
        parser: ParserKind,
    },

    /// Compute outcome rewards, regret curves, length penalties, and
    /// group-relative advantages.
    Rewards {
        /// Trajectory file produced by `run`.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        input: PathBuf,

        /// Output reward-record file.
        #[arg(long, short, default_value = "rewards.jsonl")]
        out: PathBuf,
    },

    /// Aggregate a trajectory batch into a report directory (JSON + TSV).
    Report {
        /// Trajectory file produced by `run`.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        input: PathBuf,

        /// Report directory to create or overwrite.
        #[arg(long, short, default_value = "report")]
        out: PathBuf,
    },

    /// Compare two report directories side by side.
    Compare {
        /// First report directory.
        a: PathBuf,
        /// Second report directory.
        b: PathBuf,
    },

    /// Bundle trajectories, recomputed advantage groups, and graded belief
    /// groups into one training-batch file for an external optimizer.
    Export {
        /// Trajectory file produced by `run`.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        input: PathBuf,

        /// Belief-group file produced by `grade` (omit for history-only batches).
        #[arg(long)]
        belief_groups: Option<PathBuf>,

        /// Output training-batch file.
        #[arg(long, short, default_value = "training_batch.jsonl")]
        out: PathBuf,
    },

    /// Re-verify stored trajectories: replay every guess through the
    /// environment and check observations and contexts byte-for-byte.
    Replay {
        /// Trajectory file produced by `run`.
        #[arg(long, short, default_value = "trajectories.jsonl")]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ParserKind {
    /// Deterministic grammar over position/presence/absence statements.
    Reference,
    /// Rewrite the belief into canonical form via the backend, then parse.
    Llm,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let config = load_config(cli.config.as_deref())?;

    match cli.command {
        Command::Run { regime, tasks, rollouts, out } => {
            cmd_run(&config, regime, tasks, rollouts, cli.seed, cli.parallelism, &out)
        }
        Command::Grade { input, out, parser } => cmd_grade(&config, &input, &out, parser),
        Command::Rewards { input, out } => cmd_rewards(&config, &input, &out),
        Command::Report { input, out } => cmd_report(&config, &input, &out),
        Command::Compare { a, b } => cmd_compare(&a, &b),
        Command::Export { input, belief_groups, out } => {
            cmd_export(&config, &input, belief_groups.as_deref(), &out)
        }
        Command::Replay { input } => cmd_replay(&config, &input),
    }
}

fn load_config(path: Option<&Path>) -> Result<HarnessConfig> {
    match path {
        Some(path) => Ok(HarnessConfig::load(path)?),
        None => {
            let mut config = HarnessConfig::default();
            config.env.name = Some("combination-lock-train".to_string());
            Ok(config)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(
    config: &HarnessConfig,
    regime: Regime,
    tasks: usize,
    rollouts: Option<u32>,
    base_seed: i64,
    parallelism: Option<usize>,
    out: &Path,
) -> Result<()> {
    if tasks == 0 {
        bail!("--tasks must be at least 1");
    }
    let env = config.resolve_env()?;
    let prompts = config.resolve_prompts(&env)?;
    let gateway = config.build_gateway(&env, regime)?;
    let rollouts = rollouts.unwrap_or(config.rollout.rollouts_per_task).max(1);
    let parallelism = parallelism.unwrap_or(config.rollout.parallelism);

    let mut batch = Vec::with_capacity(tasks * rollouts as usize);
    for task in 0..tasks {
        for index in 0..rollouts {
            let mut t = RolloutTask::new(env.clone(), regime, base_seed + task as i64);
            t.options = config.rollout_options(index);
            t.prompts = Some(prompts.clone());
            batch.push(t);
        }
    }

    let results = run_batch(&gateway, &batch, parallelism);
    let mut trajectories = Vec::new();
    let mut hard_failures = 0usize;
    for (result, task) in results.into_iter().zip(&batch) {
        match result {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                hard_failures += 1;
                log::error!("seed {} rollout {}: {e}", task.seed, task.options.rollout_index);
            }
        }
    }
    if trajectories.is_empty() {
        bail!("all {} episodes failed before producing a trajectory", batch.len());
    }
    store::save_trajectories(&trajectories, out)
        .with_context(|| format!("writing {}", out.display()))?;

    let solved = trajectories.iter().filter(|t| t.success).count();
    let transport = trajectories
        .iter()
        .filter(|t| t.termination == Termination::TransportFailure)
        .count();
    let steps: usize =
        trajectories.iter().filter(|t| t.success).map(|t| t.env_steps_taken).sum();
    println!(
        "{} on {}: {} episodes ({} tasks x {} rollouts), {} solved, {} transport failures{}",
        regime,
        env.slug(),
        trajectories.len(),
        tasks,
        rollouts,
        solved,
        transport,
        if hard_failures > 0 { format!(", {hard_failures} hard failures") } else { String::new() }
    );
    if solved > 0 {
        println!("mean steps to solve: {:.2}", steps as f64 / solved as f64);
    }
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// grade
// ---------------------------------------------------------------------------

fn cmd_grade(
    config: &HarnessConfig,
    input: &Path,
    out: &Path,
    parser: ParserKind,
) -> Result<()> {
    let trajectories = load_batch(input)?;
    let options = GradingOptions {
        temperature: config.backend.temperature,
        max_output_tokens: config.backend.max_output_tokens,
    };

    let mut groups = Vec::new();
    let mut graded = 0usize;
    let mut skipped = 0usize;
    for t in &trajectories {
        if t.regime != Regime::Abbel {
            skipped += 1;
            continue;
        }
        let prompts = config.resolve_prompts(&t.config)?;
        // One gateway per trajectory: the oracle backend carries belief
        // state across regeneration calls, which must not leak between
        // trajectories.
        let gateway = config.build_gateway(&t.config, Regime::Abbel)?;
        let boxed: Box<dyn BeliefParser + '_> = match parser {
            ParserKind::Reference => Box::new(ReferenceParser),
            ParserKind::Llm => Box::new(LlmParser::new(&gateway)),
        };
        let built = build_groups(t, &prompts, &gateway, boxed.as_ref(), &options)
            .with_context(|| format!("grading {}", t.trajectory_id))?;
        groups.extend(built);
        graded += 1;
    }
    if graded == 0 {
        bail!("no bottleneck trajectories in {} to grade", input.display());
    }
    store::save_belief_groups(&groups, out)
        .with_context(|| format!("writing {}", out.display()))?;

    let originals = groups.iter().filter(|g| g.grades.0 == 1).count();
    let regenerated = groups.iter().filter(|g| g.grades.1 == 1).count();
    println!(
        "graded {graded} bottleneck trajectories ({skipped} other-regime skipped): {} groups",
        groups.len()
    );
    println!(
        "original beliefs exact: {originals}/{}; regenerated exact: {regenerated}/{}",
        groups.len(),
        groups.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// rewards
// ---------------------------------------------------------------------------

fn cmd_rewards(config: &HarnessConfig, input: &Path, out: &Path) -> Result<()> {
    let trajectories = load_batch(input)?;
    let (records, groups) = reward::compute_rewards(&trajectories, &config.reward_options())?;
    store::save_reward_records(&records, out)
        .with_context(|| format!("writing {}", out.display()))?;

    let n = records.len() as f64;
    let mean_reward = records.iter().map(|r| r.outcome_reward).sum::<f64>() / n;
    let mean_abs_advantage = records.iter().map(|r| r.advantage.abs()).sum::<f64>() / n;
    println!(
        "{} reward records in {} advantage groups (sizes {})",
        records.len(),
        groups.len(),
        summarize_sizes(groups.iter().map(|g| g.group_size))
    );
    println!("mean outcome reward {mean_reward:.4}; mean |advantage| {mean_abs_advantage:.4}");
    println!("wrote {}", out.display());
    Ok(())
}

fn summarize_sizes(sizes: impl Iterator<Item = usize>) -> String {
    let sizes: Vec<usize> = sizes.collect();
    let min = sizes.iter().min().copied().unwrap_or(0);
    let max = sizes.iter().max().copied().unwrap_or(0);
    if min == max {
        format!("{min}")
    } else {
        format!("{min}..{max}")
    }
}

// ---------------------------------------------------------------------------
// report / compare
// ---------------------------------------------------------------------------

fn cmd_report(config: &HarnessConfig, input: &Path, out: &Path) -> Result<()> {
    let trajectories = load_batch(input)?;
    let report = metrics::aggregate_with(&trajectories, config.rewards.regret_convention)?;
    metrics::write_report(&report, out)?;
    let summary = fs::read_to_string(out.join("summary.txt"))
        .with_context(|| format!("reading back {}", out.join("summary.txt").display()))?;
    print!("{summary}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path) -> Result<()> {
    let left = metrics::load_report(a)?;
    let right = metrics::load_report(b)?;
    print!("{}", metrics::compare(&left, &right)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// export / replay
// ---------------------------------------------------------------------------

fn cmd_export(
    config: &HarnessConfig,
    input: &Path,
    belief_groups: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let trajectories = load_batch(input)?;
    let (_, advantage_groups) =
        reward::compute_rewards(&trajectories, &config.reward_options())?;
    let belief_groups = match belief_groups {
        Some(path) => store::load_belief_groups(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => Vec::new(),
    };
    store::export_training_batch(&trajectories, &advantage_groups, &belief_groups, out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "exported {} trajectories, {} advantage groups, {} belief groups",
        trajectories.len(),
        advantage_groups.len(),
        belief_groups.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_replay(config: &HarnessConfig, input: &Path) -> Result<()> {
    let trajectories = load_batch(input)?;
    let mut failures = Vec::new();
    for t in &trajectories {
        let prompts = config.resolve_prompts(&t.config)?;
        if let Err(e) = rollout::replay_verify(t, &prompts) {
            failures.push(format!("{}: {e}", t.trajectory_id));
        }
    }
    if failures.is_empty() {
        println!(
            "re-verified {0}/{0} trajectories byte-identically",
            trajectories.len()
        );
        Ok(())
    } else {
        for line in &failures {
            eprintln!("{line}");
        }
        bail!(
            "{} of {} trajectories failed re-verification",
            failures.len(),
            trajectories.len()
        )
    }
}

// ---------------------------------------------------------------------------
// shared
// ---------------------------------------------------------------------------

fn load_batch(input: &Path) -> Result<Vec<Trajectory>> {
    let trajectories = store::load_trajectories(input)
        .with_context(|| format!("reading {}", input.display()))?;
    if trajectories.is_empty() {
        bail!("{} holds no trajectories", input.display());
    }
    Ok(trajectories)
}
