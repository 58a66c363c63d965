//! Batch evaluation metrics: success rate with standard error, regret
//! curves, belief/history lengths per step, and per-step memory usage.
//!
//! Memory at a step is `max(belief-call input+output, action-call
//! input+output)`, summed over retries on each side, taken from the
//! recorded call results — nothing is re-tokenized. Per-step means average
//! only over trajectories still alive at that step; episodes that end early
//! drop out of later steps. Trajectories that ended in a transport failure
//! are infrastructure casualties, not policy outcomes: they are excluded
//! from the success rate (numerator and denominator) and from every curve.

use crate::gateway::count_tokens;
use crate::reward::{cumulative_regret, RegretConvention};
use crate::rollout::{CallPurpose, Regime, RetryTarget, Termination, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

// ---------------------------------------------------------------------------
// Per-step accounting
// ---------------------------------------------------------------------------

/// Token accounting for one environment step of one trajectory. Belief
/// fields are absent for regimes that never generate beliefs. Call fields
/// sum over every attempt of that phase at the step, retries included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAccount {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief_call_input_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief_call_output_tokens: Option<u64>,
    pub action_call_input_tokens: u64,
    pub action_call_output_tokens: u64,
    /// Prompt size of the step's first action call: instructions plus
    /// whatever conditioning the regime carries (full history for the
    /// baselines, the belief state under the bottleneck).
    pub history_tokens: u64,
    /// Token length of the accepted belief state itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief_tokens: Option<u64>,
    /// Character length of the accepted belief state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub belief_chars: Option<u64>,
}

impl StepAccount {
    /// The per-step memory metric: the larger of the two phases' total
    /// token traffic.
    pub fn memory_tokens(&self) -> u64 {
        let belief = self.belief_call_input_tokens.unwrap_or(0)
            + self.belief_call_output_tokens.unwrap_or(0);
        let action = self.action_call_input_tokens + self.action_call_output_tokens;
        belief.max(action)
    }
}

/// Accounts for every completed environment step (a trailing step whose
/// action never validated is not an environment step and is skipped).
pub fn step_accounts(trajectory: &Trajectory) -> Vec<StepAccount> {
    trajectory
        .steps
        .iter()
        .filter(|step| step.guess.is_some())
        .map(|step| {
            let mut belief_in = None;
            let mut belief_out = None;
            let mut action_in = 0;
            let mut action_out = 0;
            let mut history_tokens = 0;
            let mut saw_action = false;
            for record in &step.call_records {
                let is_belief = matches!(
                    record.purpose,
                    CallPurpose::BeliefUpdate
                        | CallPurpose::Retry { target: RetryTarget::Belief }
                );
                if is_belief {
                    *belief_in.get_or_insert(0) += record.result.input_tokens;
                    *belief_out.get_or_insert(0) += record.result.output_tokens;
                } else {
                    if !saw_action {
                        history_tokens = record.result.input_tokens;
                        saw_action = true;
                    }
                    action_in += record.result.input_tokens;
                    action_out += record.result.output_tokens;
                }
            }
            StepAccount {
                step: step.index,
                belief_call_input_tokens: belief_in,
                belief_call_output_tokens: belief_out,
                action_call_input_tokens: action_in,
                action_call_output_tokens: action_out,
                history_tokens,
                belief_tokens: step.belief_after.as_deref().map(count_tokens),
                belief_chars: step.belief_after.as_deref().map(|b| b.chars().count() as u64),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Batch aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
    #[error("batch mixes environments: {a} and {b}")]
    MixedConfigs { a: String, b: String },
    #[error("batch mixes regimes: {a} and {b}")]
    MixedRegimes { a: Regime, b: Regime },
    #[error("every trajectory ended in a transport failure; nothing to score")]
    NoScorableTrajectories,
    #[error("reports cover different environments: {a} and {b}")]
    MismatchedEnvs { a: String, b: String },
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unreadable report at {path}: {detail}")]
    BadReport { path: PathBuf, detail: String },
}

/// Aggregated evaluation quantities for one batch of trajectories sharing
/// an environment and a regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub env_slug: String,
    pub regime: Regime,
    pub n_trajectories: usize,
    /// Distinct tasks (seeds) in the batch.
    pub n_tasks: usize,
    pub n_transport_failures: usize,
    pub success_rate: f64,
    /// Bernoulli standard error of the mean: sqrt(p(1−p)/n).
    pub sem: f64,
    pub mean_env_steps_on_success: Option<f64>,
    pub mean_regret_curve: Vec<f64>,
    pub mean_belief_length_by_step: Vec<Option<f64>>,
    pub mean_belief_chars_by_step: Vec<Option<f64>>,
    pub mean_history_length_by_step: Vec<Option<f64>>,
    pub mean_memory_by_step: Vec<Option<f64>>,
    /// How many trajectories were still running at each step.
    pub alive_by_step: Vec<usize>,
}

/// Aggregates a batch with the default regret convention.
pub fn aggregate(trajectories: &[Trajectory]) -> Result<BatchReport, MetricsError> {
    aggregate_with(trajectories, RegretConvention::default())
}

pub fn aggregate_with(
    trajectories: &[Trajectory],
    convention: RegretConvention,
) -> Result<BatchReport, MetricsError> {
    let first = trajectories.first().ok_or(MetricsError::EmptyBatch)?;
    for t in trajectories {
        if t.config != first.config {
            return Err(MetricsError::MixedConfigs {
                a: first.config.slug(),
                b: t.config.slug(),
            });
        }
        if t.regime != first.regime {
            return Err(MetricsError::MixedRegimes { a: first.regime, b: t.regime });
        }
    }

    let scorable: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| t.termination != Termination::TransportFailure)
        .collect();
    if scorable.is_empty() {
        return Err(MetricsError::NoScorableTrajectories);
    }
    let n = scorable.len() as f64;
    let successes = scorable.iter().filter(|t| t.success).count();
    let p = successes as f64 / n;
    let sem = (p * (1.0 - p) / n).sqrt();
    let mean_env_steps_on_success = (successes > 0).then(|| {
        scorable.iter().filter(|t| t.success).map(|t| t.env_steps_taken as f64).sum::<f64>()
            / successes as f64
    });

    let horizon = first.config.horizon;
    let mut regret_sums = vec![0.0; horizon];
    for t in &scorable {
        for (sum, r) in regret_sums
            .iter_mut()
            .zip(cumulative_regret(t.success, t.env_steps_taken, horizon, convention))
        {
            *sum += r as f64;
        }
    }
    let mean_regret_curve: Vec<f64> = regret_sums.iter().map(|s| s / n).collect();

    // Per-step means over alive trajectories only.
    let mut alive_by_step = vec![0usize; horizon];
    let mut belief_len = vec![(0.0, 0usize); horizon];
    let mut belief_chars = vec![(0.0, 0usize); horizon];
    let mut history_len = vec![(0.0, 0usize); horizon];
    let mut memory = vec![(0.0, 0usize); horizon];
    for t in &scorable {
        for account in step_accounts(t) {
            let i = account.step - 1;
            if i >= horizon {
                continue;
            }
            alive_by_step[i] += 1;
            history_len[i].0 += account.history_tokens as f64;
            history_len[i].1 += 1;
            memory[i].0 += account.memory_tokens() as f64;
            memory[i].1 += 1;
            if let Some(tokens) = account.belief_tokens {
                belief_len[i].0 += tokens as f64;
                belief_len[i].1 += 1;
            }
            if let Some(chars) = account.belief_chars {
                belief_chars[i].0 += chars as f64;
                belief_chars[i].1 += 1;
            }
        }
    }
    let mean = |cells: Vec<(f64, usize)>| -> Vec<Option<f64>> {
        cells
            .into_iter()
            .map(|(sum, count)| (count > 0).then(|| sum / count as f64))
            .collect()
    };

    let tasks: BTreeSet<i64> = trajectories.iter().map(|t| t.seed).collect();
    Ok(BatchReport {
        env_slug: first.config.slug(),
        regime: first.regime,
        n_trajectories: trajectories.len(),
        n_tasks: tasks.len(),
        n_transport_failures: trajectories.len() - scorable.len(),
        success_rate: p,
        sem,
        mean_env_steps_on_success,
        mean_regret_curve,
        mean_belief_length_by_step: mean(belief_len),
        mean_belief_chars_by_step: mean(belief_chars),
        mean_history_length_by_step: mean(history_len),
        mean_memory_by_step: mean(memory),
        alive_by_step,
    })
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<(), MetricsError> {
    fs::write(path, contents).map_err(|source| MetricsError::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })
}

fn curve_table(header: &str, curve: &[Option<f64>], alive: &[usize]) -> String {
    let mut out = format!("step\t{header}\tn_alive\n");
    for (i, value) in curve.iter().enumerate() {
        let rendered = value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "{}\t{rendered}\t{}", i + 1, alive.get(i).copied().unwrap_or(0));
    }
    out
}

/// Writes a report directory: `report.json` (the full structure),
/// `summary.txt`, and one tab-separated table per curve.
pub fn write_report(report: &BatchReport, dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        action: "create",
        path: dir.to_path_buf(),
        source,
    })?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join("report.json"), &json)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "environment:        {}", report.env_slug);
    let _ = writeln!(summary, "regime:             {}", report.regime);
    let _ = writeln!(summary, "trajectories:       {}", report.n_trajectories);
    let _ = writeln!(summary, "tasks:              {}", report.n_tasks);
    let _ = writeln!(summary, "transport failures: {}", report.n_transport_failures);
    let _ = writeln!(
        summary,
        "success rate:       {:.4} ± {:.4} (SEM)",
        report.success_rate, report.sem
    );
    if let Some(steps) = report.mean_env_steps_on_success {
        let _ = writeln!(summary, "mean steps (solved): {steps:.3}");
    }
    if let Some(last) = report.mean_regret_curve.last() {
        let _ = writeln!(summary, "final mean regret:  {last:.3}");
    }
    write_file(&dir.join("summary.txt"), &summary)?;

    let regret: Vec<Option<f64>> = report.mean_regret_curve.iter().map(|&v| Some(v)).collect();
    write_file(&dir.join("regret.tsv"), &curve_table("mean_cumulative_regret", &regret, &report.alive_by_step))?;
    write_file(
        &dir.join("belief_length.tsv"),
        &curve_table("mean_belief_tokens", &report.mean_belief_length_by_step, &report.alive_by_step),
    )?;
    write_file(
        &dir.join("belief_chars.tsv"),
        &curve_table("mean_belief_chars", &report.mean_belief_chars_by_step, &report.alive_by_step),
    )?;
    write_file(
        &dir.join("history_length.tsv"),
        &curve_table("mean_history_tokens", &report.mean_history_length_by_step, &report.alive_by_step),
    )?;
    write_file(
        &dir.join("memory.tsv"),
        &curve_table("mean_memory_tokens", &report.mean_memory_by_step, &report.alive_by_step),
    )?;
    Ok(())
}

/// Reads back a report directory written by [`write_report`].
pub fn load_report(dir: &Path) -> Result<BatchReport, MetricsError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|source| MetricsError::Io {
        action: "read",
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| MetricsError::BadReport { path, detail: e.to_string() })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Side-by-side table of two reports over the same environment (typically
/// two regimes on the same seeds). Comparing different environments is a
/// structural error.
pub fn compare(a: &BatchReport, b: &BatchReport) -> Result<String, MetricsError> {
    if a.env_slug != b.env_slug {
        return Err(MetricsError::MismatchedEnvs {
            a: a.env_slug.clone(),
            b: b.env_slug.clone(),
        });
    }
    let mut out = String::new();
    let (na, nb) = (a.regime.to_string(), b.regime.to_string());
    let _ = writeln!(out, "environment: {}", a.env_slug);
    let _ = writeln!(out, "{:<26} {:>14} {:>14} {:>12}", "metric", na, nb, "delta");
    let mut scalar = |name: &str, va: f64, vb: f64| {
        let _ = writeln!(out, "{name:<26} {va:>14.4} {vb:>14.4} {:>+12.4}", vb - va);
    };
    scalar("success_rate", a.success_rate, b.success_rate);
    scalar("sem", a.sem, b.sem);
    scalar(
        "final_mean_regret",
        a.mean_regret_curve.last().copied().unwrap_or(f64::NAN),
        b.mean_regret_curve.last().copied().unwrap_or(f64::NAN),
    );
    let steps = a.mean_memory_by_step.len().max(b.mean_memory_by_step.len());
    let _ = writeln!(out, "\nper-step mean memory (tokens):");
    let _ = writeln!(out, "{:<6} {:>14} {:>14}", "step", na, nb);
    for i in 0..steps {
        let va = a.mean_memory_by_step.get(i).copied().flatten();
        let vb = b.mean_memory_by_step.get(i).copied().flatten();
        let _ = writeln!(out, "{:<6} {:>14} {:>14}", i + 1, fmt_opt(va), fmt_opt(vb));
    }
    let _ = writeln!(out, "\nper-step mean belief length (tokens):");
    let _ = writeln!(out, "{:<6} {:>14} {:>14}", "step", na, nb);
    for i in 0..steps {
        let va = a.mean_belief_length_by_step.get(i).copied().flatten();
        let vb = b.mean_belief_length_by_step.get(i).copied().flatten();
        let _ = writeln!(out, "{:<6} {:>14} {:>14}", i + 1, fmt_opt(va), fmt_opt(vb));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
