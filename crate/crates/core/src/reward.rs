//! Rewards, regret, length penalties, and group-relative advantages.
//!
//! The complete reward pipeline short of gradient updates: outcome rewards
//! from episode length, cumulative-regret curves, belief-length penalties
//! (mean-centered over the trajectories that produced a valid belief), and
//! group-standardized advantages over rollouts that share a task. The
//! penalty is subtracted after advantage normalization.

use crate::env::EnvConfig;
use crate::gateway::count_tokens;
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

// ---------------------------------------------------------------------------
// Outcome reward
// ---------------------------------------------------------------------------

/// `(H + 1 − env_steps_taken) / H` on success, −1 otherwise. Solving on the
/// first step earns 1.0; solving on the last step earns 1/H.
pub fn outcome_reward(success: bool, env_steps_taken: usize, horizon: usize) -> f64 {
    if success {
        (horizon as f64 + 1.0 - env_steps_taken as f64) / horizon as f64
    } else {
        -1.0
    }
}

// ---------------------------------------------------------------------------
// Cumulative regret
// ---------------------------------------------------------------------------

/// Whether the step on which the secret is submitted still counts as a step
/// at which the code "was not yet identified".
///
/// Under the default convention the solving step increments regret — the
/// code is only identified once feedback returns — so the curve's final
/// value on success equals the number of guesses taken. The alternative
/// stops one step earlier; the two differ by exactly 1 on successes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegretConvention {
    #[default]
    CountSolvingStep,
    ExcludeSolvingStep,
}

impl fmt::Display for RegretConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegretConvention::CountSolvingStep => "count-solving-step",
            RegretConvention::ExcludeSolvingStep => "exclude-solving-step",
        })
    }
}

impl FromStr for RegretConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count-solving-step" => Ok(RegretConvention::CountSolvingStep),
            "exclude-solving-step" => Ok(RegretConvention::ExcludeSolvingStep),
            other => Err(format!(
                "unknown regret convention '{other}' (expected count-solving-step or exclude-solving-step)"
            )),
        }
    }
}

/// Cumulative-regret curve of length `horizon`: entry `t` is the number of
/// steps among `1..=t` at which the code was not yet identified. Unsolved
/// episodes accrue regret at every step of the horizon, even past the point
/// where generation stopped.
pub fn cumulative_regret(
    success: bool,
    env_steps_taken: usize,
    horizon: usize,
    convention: RegretConvention,
) -> Vec<u32> {
    let boundary = match convention {
        RegretConvention::CountSolvingStep => env_steps_taken,
        RegretConvention::ExcludeSolvingStep => env_steps_taken.saturating_sub(1),
    };
    (1..=horizon)
        .map(|t| if success { t.min(boundary) as u32 } else { t as u32 })
        .collect()
}

// ---------------------------------------------------------------------------
// Belief-length penalty
// ---------------------------------------------------------------------------

/// Token count of the longest accepted belief state in a trajectory, or
/// `None` when it produced no valid belief (full-history regimes, or a
/// bottleneck run that died before its first belief). Belief payloads are
/// measured with the gateway's deterministic token counter, so the number is
/// comparable across backends.
pub fn max_belief_tokens(trajectory: &Trajectory) -> Option<u64> {
    trajectory
        .steps
        .iter()
        .filter_map(|step| step.belief_after.as_deref())
        .map(count_tokens)
        .max()
}

/// Mean-centered length penalties: trajectories with a valid belief are
/// penalized `coefficient × (max_belief_tokens − mean over penalized
/// trajectories)`; the rest get 0. Centering makes the penalties sum to zero
/// and shrink as beliefs shorten toward their mean.
pub fn length_penalties(max_tokens: &[Option<u64>], coefficient: f64) -> Vec<f64> {
    let penalized: Vec<f64> = max_tokens.iter().flatten().map(|&t| t as f64).collect();
    if penalized.is_empty() {
        return vec![0.0; max_tokens.len()];
    }
    let mean = penalized.iter().sum::<f64>() / penalized.len() as f64;
    max_tokens
        .iter()
        .map(|t| t.map_or(0.0, |t| coefficient * (t as f64 - mean)))
        .collect()
}

// ---------------------------------------------------------------------------
// Group-relative advantages
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("advantage group '{key}' has {size} member(s); at least 2 are required")]
    GroupTooSmall { key: String, size: usize },
    #[error("got {rewards} rewards but {penalties} penalties")]
    LengthMismatch { rewards: usize, penalties: usize },
}

/// Group-standardized advantages: `(r_i − mean) / (std + ε)` with the
/// population standard deviation, then the per-member penalty is subtracted.
pub fn grpo_advantages(
    rewards: &[f64],
    penalties: &[f64],
    epsilon: f64,
) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall { key: String::new(), size: rewards.len() });
    }
    if rewards.len() != penalties.len() {
        return Err(RewardError::LengthMismatch {
            rewards: rewards.len(),
            penalties: penalties.len(),
        });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    Ok(rewards
        .iter()
        .zip(penalties)
        .map(|(r, p)| (r - mean) / (std + epsilon) - p)
        .collect())
}

// ---------------------------------------------------------------------------
// Batch pipeline
// ---------------------------------------------------------------------------

/// One trajectory's place in the reward pipeline. `advantage` is the final
/// training signal: group-normalized, penalty already subtracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub trajectory_id: String,
    /// Shared by every rollout of the same task (config and seed).
    pub task_key: String,
    pub outcome_reward: f64,
    pub regret_curve: Vec<u32>,
    pub max_belief_tokens: Option<u64>,
    pub penalty: f64,
    pub advantage: f64,
}

/// The records that shared a task and were normalized together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub task_key: String,
    pub group_size: usize,
    pub members: Vec<RewardRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOptions {
    pub regret_convention: RegretConvention,
    /// Scale on the mean-centered belief length, 0.01 by default.
    pub length_penalty_coefficient: f64,
    /// Added to the group standard deviation before dividing.
    pub epsilon: f64,
}

impl Default for RewardOptions {
    fn default() -> Self {
        RewardOptions {
            regret_convention: RegretConvention::default(),
            length_penalty_coefficient: 0.01,
            epsilon: 1e-6,
        }
    }
}

fn task_key(config: &EnvConfig, seed: i64) -> String {
    let vocab: String = config.vocabulary.iter().collect();
    format!("{}:{vocab}:s{seed}", config.slug())
}

/// Runs the whole pipeline over a batch: outcome rewards and regret curves
/// per trajectory, length penalties centered across the entire batch, then
/// advantages within each task group (trajectories sharing config and seed).
/// Records come back in input order alongside the groups.
pub fn compute_rewards(
    trajectories: &[Trajectory],
    options: &RewardOptions,
) -> Result<(Vec<RewardRecord>, Vec<AdvantageGroup>), RewardError> {
    let max_tokens: Vec<Option<u64>> = trajectories.iter().map(max_belief_tokens).collect();
    let penalties = length_penalties(&max_tokens, options.length_penalty_coefficient);

    let mut records: Vec<RewardRecord> = trajectories
        .iter()
        .zip(&max_tokens)
        .zip(&penalties)
        .map(|((t, &tokens), &penalty)| RewardRecord {
            trajectory_id: t.trajectory_id.clone(),
            task_key: task_key(&t.config, t.seed),
            outcome_reward: outcome_reward(t.success, t.env_steps_taken, t.config.horizon),
            regret_curve: cumulative_regret(
                t.success,
                t.env_steps_taken,
                t.config.horizon,
                options.regret_convention,
            ),
            max_belief_tokens: tokens,
            penalty,
            advantage: 0.0,
        })
        .collect();

    // Group by task, preserving first-appearance order.
    let mut group_indices: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut group_order: Vec<String> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let entry = group_indices.entry(record.task_key.clone()).or_default();
        if entry.is_empty() {
            group_order.push(record.task_key.clone());
        }
        entry.push(i);
    }

    let mut groups = Vec::with_capacity(group_order.len());
    for key in group_order {
        let indices = &group_indices[&key];
        if indices.len() < 2 {
            return Err(RewardError::GroupTooSmall { key, size: indices.len() });
        }
        let rewards: Vec<f64> = indices.iter().map(|&i| records[i].outcome_reward).collect();
        let member_penalties: Vec<f64> = indices.iter().map(|&i| records[i].penalty).collect();
        let advantages = grpo_advantages(&rewards, &member_penalties, options.epsilon)?;
        for (&i, advantage) in indices.iter().zip(advantages) {
            records[i].advantage = advantage;
        }
        groups.push(AdvantageGroup {
            task_key: key,
            group_size: indices.len(),
            members: indices.iter().map(|&i| records[i].clone()).collect(),
        });
    }
    Ok((records, groups))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
