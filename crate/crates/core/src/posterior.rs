//! Exact posteriors over secrets, computed by candidate-set enumeration.
//!
//! In these games the posterior given a history is uniform over the set of
//! codes consistent with every (guess, feedback) pair, so belief tracking
//! reduces to filtering the enumerated hypothesis space. The projection of a
//! candidate set onto per-position character sets is the ground truth that
//! generated beliefs are graded against.

use crate::env::{self, EnvConfig, EnvKind, Guess, StructuredFeedback};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// One observed interaction: the guess made and the feedback received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub guess: Guess,
    pub feedback: StructuredFeedback,
}

/// The set of secrets consistent with everything observed so far, in
/// canonical enumeration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactPosterior {
    config: EnvConfig,
    candidates: Vec<Vec<char>>,
}

/// What a candidate set pins down about each position and about membership:
/// per-position possibility sets, characters present in every candidate, and
/// characters ruled out entirely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosteriorProjection {
    pub per_position: Vec<BTreeSet<char>>,
    pub present_somewhere: BTreeSet<char>,
    pub absent: BTreeSet<char>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PosteriorError {
    #[error("no candidates remain; the history is inconsistent")]
    EmptyPosterior,
}

/// The full hypothesis space for a config (every possible secret).
pub fn hypothesis_space(config: &EnvConfig) -> ExactPosterior {
    ExactPosterior {
        candidates: config.enumerate_codes(),
        config: config.clone(),
    }
}

impl ExactPosterior {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Remaining candidates, in canonical order.
    pub fn candidates(&self) -> &[Vec<char>] {
        &self.candidates
    }

    pub fn contains(&self, code: &[char]) -> bool {
        self.candidates.iter().any(|c| c == code)
    }

    /// Keeps exactly the candidates that would have produced
    /// `entry.feedback` for `entry.guess` had they been the secret.
    pub fn filter(&self, entry: &HistoryEntry) -> ExactPosterior {
        let keep: Vec<Vec<char>> = self
            .candidates
            .iter()
            .filter(|candidate| {
                env::feedback(candidate, entry.guess.chars(), &self.config) == entry.feedback
            })
            .cloned()
            .collect();
        ExactPosterior { config: self.config.clone(), candidates: keep }
    }

    /// Folds [`filter`](Self::filter) over a whole history.
    pub fn filter_history(&self, entries: &[HistoryEntry]) -> ExactPosterior {
        entries.iter().fold(self.clone(), |p, e| p.filter(e))
    }

    /// Projects the candidate set onto per-position sets and membership sets.
    ///
    /// `per_position[i]` holds every character appearing at position `i` in
    /// some candidate; `present_somewhere` holds characters occurring in all
    /// candidates; `absent` holds vocabulary characters occurring in none.
    pub fn project(&self) -> Result<PosteriorProjection, PosteriorError> {
        if self.candidates.is_empty() {
            return Err(PosteriorError::EmptyPosterior);
        }
        let length = self.config.code_length;
        let mut per_position = vec![BTreeSet::new(); length];
        let mut union: BTreeSet<char> = BTreeSet::new();
        let mut present: Option<BTreeSet<char>> = None;
        for candidate in &self.candidates {
            for (i, &c) in candidate.iter().enumerate() {
                per_position[i].insert(c);
            }
            let distinct: BTreeSet<char> = candidate.iter().copied().collect();
            union.extend(distinct.iter().copied());
            present = Some(match present {
                None => distinct,
                Some(acc) => acc.intersection(&distinct).copied().collect(),
            });
        }
        let absent = self
            .config
            .vocabulary
            .iter()
            .copied()
            .filter(|c| !union.contains(c))
            .collect();
        Ok(PosteriorProjection {
            per_position,
            present_somewhere: present.unwrap_or_default(),
            absent,
        })
    }
}

/// The noun feedback text uses for the hidden code ("lock", "word", "code").
pub fn container_noun(config: &EnvConfig) -> &'static str {
    match config.kind {
        EnvKind::CombinationLock => "lock",
        EnvKind::Wordle => "word",
        EnvKind::Mastermind => "code",
    }
}

/// Renders a projection as canonical belief text: one `Position i: ...` line
/// per slot, then the known-present and known-absent character lines. Empty
/// sets render as `none`. This is the ground-truth format belief grading
/// compares against, and what the reference parser reads back.
pub fn render_projection(projection: &PosteriorProjection, config: &EnvConfig) -> String {
    let list = |set: &BTreeSet<char>| -> String {
        if set.is_empty() {
            "none".to_string()
        } else {
            set.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
        }
    };
    let noun = container_noun(config);
    let mut lines: Vec<String> = projection
        .per_position
        .iter()
        .enumerate()
        .map(|(i, set)| format!("Position {}: {}", i + 1, list(set)))
        .collect();
    lines.push(format!("In the {noun}: {}", list(&projection.present_somewhere)));
    lines.push(format!("Not in the {noun}: {}", list(&projection.absent)));
    lines.join("\n")
}
