//! Belief grading against exact posteriors.
//!
//! A generated belief is graded 1 when the per-position possibility sets it
//! expresses equal the exact posterior's projection, and 0 otherwise —
//! including when the belief cannot be parsed at all. For each graded step a
//! size-two group is built: the original belief plus one regenerated from
//! the byte-identical stored context. Grading a trajectory stops after the
//! first original belief that grades 0 (that group is still emitted).
//!
//! Parsing comes in two flavors: a deterministic reference grammar for
//! canonical and lightly-structured text (used throughout the tests), and an
//! LLM-backed parser that rewrites free-form prose into the canonical form
//! first.

use crate::env::{self, EnvConfig};
use crate::gateway::{CompletionRequest, Gateway};
use crate::posterior::{self, container_noun, PosteriorProjection};
use crate::prompt::{self, Context, PromptSet, TagKind};
use crate::rollout::{CallPurpose, Regime, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::OnceLock;
use thiserror::Error;

// ---------------------------------------------------------------------------
// Parsed beliefs and grading
// ---------------------------------------------------------------------------

/// What a belief text pins down, in the same shape as a posterior
/// projection. `parse_ok` is false when no statement could be recognized or
/// some position's possibility set came out empty; such beliefs grade 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedBelief {
    pub per_position: Vec<BTreeSet<char>>,
    pub present_somewhere: BTreeSet<char>,
    pub absent: BTreeSet<char>,
    pub parse_ok: bool,
}

/// Grade a parsed belief against the truth: 1 iff it parsed and its
/// per-position sets match the projection exactly.
pub fn grade(parsed: &ParsedBelief, truth: &PosteriorProjection) -> u8 {
    u8::from(parsed.parse_ok && parsed.per_position == truth.per_position)
}

/// One graded step: the stored belief-update context, the two beliefs (the
/// original and the one regenerated from the identical context), and their
/// grades in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGroup {
    pub trajectory_id: String,
    pub step_index: usize,
    pub context: Context,
    pub original_belief: String,
    pub regenerated_belief: String,
    pub grades: (u8, u8),
}

// ---------------------------------------------------------------------------
// Reference grammar
// ---------------------------------------------------------------------------

macro_rules! cached_regex {
    ($name:ident, $pattern:expr) => {
        fn $name() -> &'static regex::Regex {
            static RE: OnceLock<regex::Regex> = OnceLock::new();
            RE.get_or_init(|| regex::Regex::new($pattern).expect("static pattern compiles"))
        }
    };
}

const NOUN: &str = r"(?:lock|word|code|combination|secret|target\s+word)";

cached_regex!(
    position_re,
    r"(?ix)^(?:the\s+)?positions?\s+
      (?P<idx>\d+(?:\s*(?:,|and|&)\s*(?:positions?\s+)?\d+)*)\s*
      (?P<sep>∈|=|:|can\s*not\s+be|can't\s+be|is\s+not(?:\s+one\s+of)?|are\s+not(?:\s+one\s+of)?|
        must\s+be(?:\s+one\s+of)?|can\s+(?:only\s+)?be(?:\s+one\s+of)?|could\s+be|may\s+be|
        is\s+(?:one\s+of|either)|are\s+(?:one\s+of|either)|is|are)\s*
      (?P<set>.+)$"
);

cached_regex!(index_re, r"\d+");

cached_regex!(
    token_re,
    r#"(?x)
      (?P<r1>[0-9A-Za-z])\s*(?:\.\.=?|–|—|-|\s+to\s+)\s*(?P<r2>[0-9A-Za-z])
      |'(?P<q1>[^'])'
      |"(?P<q2>[^"])"
      |\b(?P<bare>[0-9A-Za-z])\b"#
);

cached_regex!(conjunction_re, r"(?i)\b(?:but|however|unless|while|although|whereas)\b");

cached_regex!(
    absent_head_re,
    &format!(
        r"(?i)^(?:not\s+in\s+the\s+{NOUN}|(?:excluded|absent|eliminated|ruled\s+out)(?:\s+(?:characters?|letters?|digits?))?)\s*:?\s*(?P<list>.*)$"
    )
);

cached_regex!(
    absent_tail_re,
    &format!(
        r"(?i)^(?P<list>.+?)\s+(?:(?:is|are)\s+)?(?:not\s+in\s+the\s+{NOUN}|excluded|absent|eliminated|ruled\s+out)$"
    )
);

cached_regex!(
    present_head_re,
    &format!(
        r"(?i)^(?:in\s+the\s+{NOUN}|(?:included|present|confirmed)(?:\s+(?:characters?|letters?|digits?))?)\s*:?\s*(?P<list>.*)$"
    )
);

cached_regex!(
    present_tail_re,
    &format!(
        r"(?i)^(?P<list>.+?)\s+(?:(?:is|are|must\s+be)\s+)?(?:somewhere\s+)?in\s+the\s+{NOUN}$"
    )
);

cached_regex!(list_filler_re, r#"(?i)['"`,&{}\[\]()\s]|\band\b|\bor\b"#);

/// True when `s` consists only of list tokens (characters, ranges,
/// separators) — the purity requirement that keeps feedback echoes like
/// "0 is not in Position 1, but is in the lock" from being read as
/// membership statements.
fn list_only(s: &str) -> bool {
    let without_tokens = token_re().replace_all(s, " ");
    let residue = list_filler_re().replace_all(&without_tokens, "");
    residue.trim().is_empty()
}

/// Extracts the characters a set description names: quoted or bare single
/// characters and inclusive ranges (`3..9`, `7-9`, `b to f`), stopping at a
/// contrastive conjunction. `none`-like words yield the empty set.
fn extract_set(spec: &str, config: &EnvConfig) -> BTreeSet<char> {
    let spec = match conjunction_re().find(spec) {
        Some(m) => &spec[..m.start()],
        None => spec,
    };
    let mut set = BTreeSet::new();
    if matches!(spec.trim().to_lowercase().as_str(), "none" | "nothing" | "empty") {
        return set;
    }
    let vocab: BTreeSet<char> = config.vocabulary.iter().copied().collect();
    let mut add = |c: char| {
        if vocab.contains(&c) {
            set.insert(c);
        } else {
            let folded = c.to_ascii_lowercase();
            if vocab.contains(&folded) {
                set.insert(folded);
            }
        }
    };
    for caps in token_re().captures_iter(spec) {
        if let (Some(a), Some(b)) = (caps.name("r1"), caps.name("r2")) {
            let (a, b) =
                (a.as_str().chars().next().unwrap(), b.as_str().chars().next().unwrap());
            if (a.is_ascii_digit() == b.is_ascii_digit()) && a <= b {
                for code in a as u32..=b as u32 {
                    add(char::from_u32(code).unwrap());
                }
            }
        } else if let Some(m) = caps.name("q1").or_else(|| caps.name("q2")).or_else(|| caps.name("bare")) {
            add(m.as_str().chars().next().unwrap());
        }
    }
    set
}

fn split_fragments(text: &str) -> Vec<&str> {
    text.split(['\n', ';'])
        .flat_map(|piece| piece.split(". "))
        .collect()
}

/// Deterministic belief parser.
///
/// Statements it recognizes, one per line / `;` / sentence:
/// - position sets: `Position 1: 3, 4`, `Positions 2,3 ∈ {0,3..9}`,
///   `Position 2 and Position 3 can be '0' or '1'`, with negated forms
///   (`cannot be`, `is not`) subtracting instead of assigning;
/// - known-absent characters: `Not in the lock: 1, 2`, `1,2 excluded`,
///   `5 is not in the word` — these also subtract from every position;
/// - known-present characters: `In the lock: 0`, `0 is in the lock`.
///
/// Membership statements require a pure character list before the verb, so
/// feedback echoes ("0 is not in Position 1, but is in the lock") are never
/// misread. Unassigned positions default to the full vocabulary; statements
/// apply in order and later position assignments replace earlier ones.
pub fn reference_parse(text: &str, config: &EnvConfig) -> ParsedBelief {
    let full: BTreeSet<char> = config.vocabulary.iter().copied().collect();
    let length = config.code_length;
    let mut per_position: Vec<BTreeSet<char>> = vec![full.clone(); length];
    let mut present = BTreeSet::new();
    let mut absent: BTreeSet<char> = BTreeSet::new();
    let mut recognized = 0usize;

    for fragment in split_fragments(text) {
        let frag = fragment.trim().trim_end_matches(['.', '!']).trim();
        if frag.is_empty() {
            continue;
        }
        if let Some(caps) = position_re().captures(frag) {
            let indices: Vec<usize> = index_re()
                .find_iter(caps.name("idx").unwrap().as_str())
                .filter_map(|m| m.as_str().parse().ok())
                .collect();
            if indices.iter().all(|&i| i >= 1 && i <= length) && !indices.is_empty() {
                let set = extract_set(caps.name("set").unwrap().as_str(), config);
                let negated = caps.name("sep").unwrap().as_str().to_lowercase().contains("not");
                recognized += 1;
                for i in indices {
                    if negated {
                        for c in &set {
                            per_position[i - 1].remove(c);
                        }
                    } else {
                        per_position[i - 1] = set.clone();
                    }
                }
                continue;
            }
        }
        // Absent forms strictly before present forms: "not in the lock"
        // contains "in the lock".
        let absent_list = absent_head_re()
            .captures(frag)
            .map(|c| c.name("list").unwrap().as_str().to_string())
            .or_else(|| {
                absent_tail_re().captures(frag).and_then(|c| {
                    let list = c.name("list").unwrap().as_str();
                    list_only(list).then(|| list.to_string())
                })
            });
        if let Some(list) = absent_list {
            let chars = extract_set(&list, config);
            recognized += 1;
            for c in &chars {
                absent.insert(*c);
                for set in &mut per_position {
                    set.remove(c);
                }
            }
            continue;
        }
        let present_list = present_head_re()
            .captures(frag)
            .map(|c| c.name("list").unwrap().as_str().to_string())
            .or_else(|| {
                present_tail_re().captures(frag).and_then(|c| {
                    let list = c.name("list").unwrap().as_str();
                    list_only(list).then(|| list.to_string())
                })
            });
        if let Some(list) = present_list {
            present.extend(extract_set(&list, config));
            recognized += 1;
        }
    }

    let parse_ok = recognized > 0 && per_position.iter().all(|s| !s.is_empty());
    ParsedBelief { per_position, present_somewhere: present, absent, parse_ok }
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("belief parser call failed: {0}")]
    Transport(String),
}

/// Converts belief text into structured per-position sets.
pub trait BeliefParser {
    fn parse(&self, belief: &str, config: &EnvConfig) -> Result<ParsedBelief, ParserError>;
}

/// The deterministic grammar above; never fails.
pub struct ReferenceParser;

impl BeliefParser for ReferenceParser {
    fn parse(&self, belief: &str, config: &EnvConfig) -> Result<ParsedBelief, ParserError> {
        Ok(reference_parse(belief, config))
    }
}

/// Rewrites free-form prose into the canonical form with an LLM, then reads
/// the rewrite with the reference grammar. The default parser for grading
/// model-generated beliefs; tests use [`ReferenceParser`].
pub struct LlmParser<'a> {
    gateway: &'a Gateway,
    temperature: f64,
    max_output_tokens: u64,
}

impl<'a> LlmParser<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        LlmParser { gateway, temperature: 0.0, max_output_tokens: 1024 }
    }

    fn rewrite_prompt(&self, belief: &str, config: &EnvConfig) -> String {
        let noun = container_noun(config);
        let vocabulary = config
            .vocabulary
            .iter()
            .map(|c| format!("'{c}'"))
            .collect::<Vec<_>>()
            .join(", ");
        let position_lines = (1..=config.code_length)
            .map(|i| format!("Position {i}: <every character that could be at position {i}>"))
            .collect::<Vec<_>>()
            .join("\n");
        format!(
            "Rewrite the following belief about a {length}-character guessing game into a fixed form.\n\
             The valid characters are: {vocabulary}\n\n\
             Respond with exactly these lines and nothing else:\n\
             {position_lines}\n\
             In the {noun}: <characters known to be somewhere in the {noun}, or none>\n\
             Not in the {noun}: <characters known to be impossible anywhere, or none>\n\n\
             If the belief gives no information about a position, list every valid character for it.\n\
             Do not add new deductions; only restate what the belief says.\n\n\
             Belief:\n{belief}",
            length = config.code_length,
        )
    }
}

impl BeliefParser for LlmParser<'_> {
    fn parse(&self, belief: &str, config: &EnvConfig) -> Result<ParsedBelief, ParserError> {
        let request = CompletionRequest {
            context: Context::user(self.rewrite_prompt(belief, config)),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            seed_hint: None,
        };
        let result = self
            .gateway
            .complete(&request)
            .map_err(|e| ParserError::Transport(e.to_string()))?;
        Ok(reference_parse(&result.text, config))
    }
}

// ---------------------------------------------------------------------------
// Group construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingOptions {
    /// Sampling temperature for belief regeneration.
    pub temperature: f64,
    pub max_output_tokens: u64,
}

impl Default for GradingOptions {
    fn default() -> Self {
        GradingOptions { temperature: 1.0, max_output_tokens: 1024 }
    }
}

#[derive(Debug, Error)]
pub enum GradingError {
    #[error("trajectory {id} ran under {regime}, not the belief bottleneck")]
    WrongRegime { id: String, regime: Regime },
    #[error("trajectory {id} step {step}: no stored belief-update context")]
    MissingContext { id: String, step: usize },
    #[error("trajectory {id} step {step}: stored belief context differs from the rebuilt one")]
    ContextMismatch { id: String, step: usize },
    #[error("trajectory {id} step {step}: recorded feedback is unreadable: {detail}")]
    BadObservation { id: String, step: usize, detail: String },
    #[error("trajectory {id} step {step}: no candidate is consistent with the recorded feedback")]
    InconsistentTranscript { id: String, step: usize },
}

/// Builds size-two belief groups for a bottleneck trajectory (Algorithm:
/// original + one regeneration per step, early stop on the first original
/// grade of 0).
///
/// For each environment step the exact posterior is advanced with the
/// recorded (guess, feedback) pair; its projection is the grading truth. The
/// stored belief-update context is verified byte-for-byte against a rebuild
/// from recorded data — a mismatch or a missing record is a structural error
/// — and the regeneration is requested from that stored context. A transport
/// failure in the regeneration or the parser skips the group, logs, and
/// stops grading the trajectory; groups built so far are returned.
pub fn build_groups(
    trajectory: &Trajectory,
    prompts: &PromptSet,
    policy: &Gateway,
    parser: &dyn BeliefParser,
    options: &GradingOptions,
) -> Result<Vec<BeliefGroup>, GradingError> {
    if trajectory.regime != Regime::Abbel {
        return Err(GradingError::WrongRegime {
            id: trajectory.trajectory_id.clone(),
            regime: trajectory.regime,
        });
    }
    let config = &trajectory.config;
    let mut posterior = posterior::hypothesis_space(config);
    let mut belief = prompts.initial_belief.clone();
    let mut groups = Vec::new();

    for step in &trajectory.steps {
        let (Some(guess), Some(original_belief)) = (&step.guess, &step.belief_after) else {
            break; // incomplete trailing step: nothing gradable from here on
        };
        let (feedback, _) =
            env::parse_observation(&step.observation, config).map_err(|e| {
                GradingError::BadObservation {
                    id: trajectory.trajectory_id.clone(),
                    step: step.index,
                    detail: e.to_string(),
                }
            })?;
        posterior =
            posterior.filter(&posterior::HistoryEntry { guess: guess.clone(), feedback });
        let truth = posterior.project().map_err(|_| GradingError::InconsistentTranscript {
            id: trajectory.trajectory_id.clone(),
            step: step.index,
        })?;

        let belief_call = step
            .call_records
            .iter()
            .find(|r| matches!(r.purpose, CallPurpose::BeliefUpdate))
            .ok_or_else(|| GradingError::MissingContext {
                id: trajectory.trajectory_id.clone(),
                step: step.index,
            })?;
        let action_str = prompt::action_text(guess, config);
        let expected =
            prompt::build_belief_context(prompts, &belief, &action_str, &step.observation);
        if belief_call.context != expected {
            return Err(GradingError::ContextMismatch {
                id: trajectory.trajectory_id.clone(),
                step: step.index,
            });
        }

        // Regenerate from the byte-identical stored context.
        let request = CompletionRequest {
            context: belief_call.context.clone(),
            temperature: options.temperature,
            max_output_tokens: options.max_output_tokens,
            seed_hint: None,
        };
        let regenerated_belief = match policy.complete(&request) {
            Ok(result) => prompt::parse_tagged(&result.text, &prompts.belief_tag, TagKind::Belief)
                .payload
                .unwrap_or_default(),
            Err(err) => {
                log::warn!(
                    "{} step {}: belief regeneration failed ({err}); skipping group and stopping",
                    trajectory.trajectory_id,
                    step.index
                );
                return Ok(groups);
            }
        };

        let parsed_original = match parser.parse(original_belief, config) {
            Ok(parsed) => parsed,
            Err(err) => {
                log::warn!(
                    "{} step {}: belief parser failed ({err}); skipping group and stopping",
                    trajectory.trajectory_id,
                    step.index
                );
                return Ok(groups);
            }
        };
        let parsed_regenerated = match parser.parse(&regenerated_belief, config) {
            Ok(parsed) => parsed,
            Err(err) => {
                log::warn!(
                    "{} step {}: belief parser failed ({err}); skipping group and stopping",
                    trajectory.trajectory_id,
                    step.index
                );
                return Ok(groups);
            }
        };
        let grades = (grade(&parsed_original, &truth), grade(&parsed_regenerated, &truth));
        groups.push(BeliefGroup {
            trajectory_id: trajectory.trajectory_id.clone(),
            step_index: step.index,
            context: belief_call.context.clone(),
            original_belief: original_belief.clone(),
            regenerated_belief,
            grades,
        });
        if grades.0 == 0 {
            break; // the group for the first failing belief is emitted, then stop
        }
        belief = original_belief.clone();
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::feedback;
    use crate::gateway::{MockBackend, RetryPolicy};
    use crate::posterior::{hypothesis_space, render_projection, HistoryEntry};
    use crate::rollout::{run_episode, OracleBackend, RolloutOptions};
    use std::sync::Arc;

    fn lock() -> EnvConfig {
        EnvConfig::builtin("combination-lock-train").unwrap()
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn set(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    /// Posterior after guessing 012 against secret 340: 0 is misplaced at
    /// position 1, 1 and 2 are absent (84 candidates).
    fn misplaced_zero_truth() -> PosteriorProjection {
        let config = lock();
        let guess = crate::env::validate_guess(&chars("012"), &config).unwrap();
        let fb = feedback(&chars("340"), guess.chars(), &config);
        hypothesis_space(&config)
            .filter(&HistoryEntry { guess, feedback: fb })
            .project()
            .unwrap()
    }

    #[test]
    fn canonical_render_round_trips_and_grades_one() {
        let config = lock();
        let truth = misplaced_zero_truth();
        let rendered = render_projection(&truth, &config);
        let parsed = reference_parse(&rendered, &config);
        assert!(parsed.parse_ok);
        assert_eq!(parsed.per_position, truth.per_position);
        assert_eq!(parsed.present_somewhere, truth.present_somewhere);
        assert_eq!(parsed.absent, truth.absent);
        assert_eq!(grade(&parsed, &truth), 1);
    }

    #[test]
    fn compact_range_belief_grades_one() {
        let config = lock();
        let truth = misplaced_zero_truth();
        let belief =
            "Position 1 ∈ {3..9}; Positions 2,3 ∈ {0,3..9}; 0 in the lock; 1,2 excluded";
        let parsed = reference_parse(belief, &config);
        assert!(parsed.parse_ok);
        assert_eq!(grade(&parsed, &truth), 1);
        assert_eq!(parsed.present_somewhere, set("0"));
        assert_eq!(parsed.absent, set("12"));
    }

    #[test]
    fn overconfident_early_belief_grades_zero() {
        // A belief that misreads misplacement feedback as a positive
        // constraint: its position sets contradict the exact posterior.
        let config = lock();
        let truth = misplaced_zero_truth();
        let belief = "Position 1 can be '1' or '2'.\n\n\
            Position 2 and Position 3 can be '0', '1', or '2', but '1' and '2' cannot simultaneously be in Position 1 and the other positions at the same time.\n\n\
            '0' must be in either Position 2 or Position 3.";
        let parsed = reference_parse(belief, &config);
        assert!(parsed.parse_ok, "the statements are readable, just wrong");
        assert_eq!(parsed.per_position[0], set("12"));
        assert_eq!(parsed.per_position[1], set("012"));
        assert_eq!(parsed.per_position[2], set("012"));
        assert_eq!(grade(&parsed, &truth), 0);
    }

    #[test]
    fn empty_and_unparseable_beliefs_grade_zero() {
        let config = lock();
        let truth = misplaced_zero_truth();
        for belief in ["", "   ", "I feel lucky today!", "the secret is probably something"] {
            let parsed = reference_parse(belief, &config);
            assert!(!parsed.parse_ok, "{belief:?}");
            assert_eq!(grade(&parsed, &truth), 0);
        }
    }

    #[test]
    fn feedback_echoes_are_not_membership_statements() {
        let config = lock();
        let parsed = reference_parse("0 is not in Position 1, but is in the lock", &config);
        assert!(!parsed.parse_ok, "an echoed feedback line pins nothing down");
        assert!(parsed.absent.is_empty());
        assert!(parsed.present_somewhere.is_empty());
    }

    #[test]
    fn prose_belief_with_mixed_forms_parses_exactly() {
        let config = lock();
        let belief = "Position 1 is one of 3, 4 or 5. Position 2 must be '0'. Position 3: 7-9.\n\
            0 is in the lock. 1 and 2 are not in the lock.";
        let parsed = reference_parse(belief, &config);
        assert!(parsed.parse_ok);
        assert_eq!(parsed.per_position[0], set("345"));
        assert_eq!(parsed.per_position[1], set("0"));
        assert_eq!(parsed.per_position[2], set("789"));
        assert_eq!(parsed.present_somewhere, set("0"));
        assert_eq!(parsed.absent, set("12"));
    }

    #[test]
    fn subtractive_statements_narrow_unmentioned_positions() {
        let config = lock();
        // No explicit set for any position: exclusions apply everywhere.
        let parsed = reference_parse("Not in the lock: 1, 2", &config);
        assert!(parsed.parse_ok);
        for set_at in &parsed.per_position {
            assert_eq!(*set_at, set("03456789"));
        }
        // A later explicit assignment replaces the subtracted set.
        let parsed = reference_parse("Not in the lock: 1, 2\nPosition 1: 1, 5", &config);
        assert_eq!(parsed.per_position[0], set("15"));
        // Negated position statements subtract rather than assign.
        let parsed = reference_parse("Position 1 cannot be 0, 1, or 2", &config);
        assert_eq!(parsed.per_position[0], set("3456789"));
        assert_eq!(parsed.per_position[1], set("0123456789"));
    }

    #[test]
    fn wordle_beliefs_parse_with_letter_vocabulary() {
        let config = EnvConfig::builtin("wordle").unwrap();
        let belief = "Position 3: a\nPosition 4: r\nNot in the word: s, t, e\nIn the word: a, r";
        let parsed = reference_parse(belief, &config);
        assert!(parsed.parse_ok);
        assert_eq!(parsed.per_position[2], set("a"));
        assert_eq!(parsed.per_position[3], set("r"));
        assert_eq!(parsed.absent, set("est"));
        assert_eq!(parsed.present_somewhere, set("ar"));
        // Letters quoted in uppercase fold onto the lowercase vocabulary.
        let parsed = reference_parse("Position 1 must be 'G'", &config);
        assert_eq!(parsed.per_position[0], set("g"));
    }

    fn oracle_gateway(config: &EnvConfig) -> Gateway {
        Gateway::new(
            Arc::new(OracleBackend::new(config.clone(), Regime::Abbel)),
            RetryPolicy::default(),
            4,
        )
    }

    fn mock_gateway(script: Vec<String>, cycle: bool) -> Gateway {
        let mock = MockBackend::new(script);
        let mock = if cycle { mock.cycling() } else { mock };
        Gateway::new(Arc::new(mock), RetryPolicy::default(), 4)
    }

    /// An oracle episode plus a regenerator scripted with the exact-truth
    /// beliefs: every group grades (1, 1).
    #[test]
    fn perfect_beliefs_grade_one_at_every_step() {
        let config = lock();
        let prompts = PromptSet::for_env(&config);
        let gateway = oracle_gateway(&config);
        let t = run_episode(&gateway, &config, &prompts, Regime::Abbel, 517, &RolloutOptions::default())
            .unwrap();
        assert!(t.success && t.env_steps_taken >= 2);

        // Script the regenerator with the canonical truth at each step.
        let mut posterior = hypothesis_space(&config);
        let mut script = Vec::new();
        for step in &t.steps {
            let guess = step.guess.clone().unwrap();
            let (feedback, _) = env::parse_observation(&step.observation, &config).unwrap();
            posterior = posterior.filter(&HistoryEntry { guess, feedback });
            let body = render_projection(&posterior.project().unwrap(), &config);
            script.push(format!("<belief>{body}</belief>"));
        }
        let regenerator = mock_gateway(script, false);
        let groups = build_groups(&t, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default())
            .unwrap();
        assert_eq!(groups.len(), t.env_steps_taken);
        for group in &groups {
            assert_eq!(group.grades, (1, 1), "step {}", group.step_index);
            assert_eq!(group.trajectory_id, t.trajectory_id);
            assert!(!group.original_belief.is_empty());
        }
    }

    #[test]
    fn garbage_regenerations_grade_zero_without_stopping() {
        let config = lock();
        let prompts = PromptSet::for_env(&config);
        let gateway = oracle_gateway(&config);
        let t = run_episode(&gateway, &config, &prompts, Regime::Abbel, 517, &RolloutOptions::default())
            .unwrap();
        let regenerator =
            mock_gateway(vec!["<belief>no idea at all</belief>".to_string()], true);
        let groups = build_groups(&t, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default())
            .unwrap();
        // Original beliefs are perfect, so grading runs the whole trajectory
        // even though every regeneration grades 0.
        assert_eq!(groups.len(), t.env_steps_taken);
        for group in &groups {
            assert_eq!(group.grades, (1, 0));
        }
    }

    #[test]
    fn grading_stops_after_the_first_failing_original_belief() {
        let config = lock();
        let prompts = PromptSet::for_env(&config);
        // A policy that guesses validly but writes useless beliefs: the
        // first original belief grades 0, so exactly one group is emitted
        // no matter how many steps the episode took.
        let policy = mock_gateway(
            vec![
                "<action>['0', '1', '2']</action>".to_string(),
                "<belief>thinking hard</belief>".to_string(),
            ],
            true,
        );
        let t = run_episode(&policy, &config, &prompts, Regime::Abbel, 100, &RolloutOptions::default())
            .unwrap();
        assert!(t.env_steps_taken >= 2, "seed 100's secret is not 012");
        let regenerator = mock_gateway(vec!["<belief>also useless</belief>".to_string()], true);
        let groups = build_groups(&t, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default())
            .unwrap();
        assert_eq!(groups.len(), 1, "one group for the failing belief, then stop");
        assert_eq!(groups[0].grades, (0, 0));
        assert_eq!(groups[0].step_index, 1);
    }

    #[test]
    fn structural_problems_are_errors() {
        let config = lock();
        let prompts = PromptSet::for_env(&config);
        let gateway = oracle_gateway(&config);
        let t = run_episode(&gateway, &config, &prompts, Regime::Abbel, 44, &RolloutOptions::default())
            .unwrap();
        let regenerator = mock_gateway(vec!["<belief>x</belief>".to_string()], true);

        // Vanilla trajectories cannot be graded.
        let vanilla_gw = Gateway::new(
            Arc::new(OracleBackend::new(config.clone(), Regime::Vanilla)),
            RetryPolicy::default(),
            4,
        );
        let v = run_episode(&vanilla_gw, &config, &prompts, Regime::Vanilla, 44, &RolloutOptions::default())
            .unwrap();
        assert!(matches!(
            build_groups(&v, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default()),
            Err(GradingError::WrongRegime { .. })
        ));

        // A missing belief-update record is structural, not a grade.
        let mut missing = t.clone();
        missing.steps[0]
            .call_records
            .retain(|r| !matches!(r.purpose, CallPurpose::BeliefUpdate));
        assert!(matches!(
            build_groups(&missing, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default()),
            Err(GradingError::MissingContext { step: 1, .. })
        ));

        // A doctored stored context is detected byte-for-byte.
        let mut doctored = t.clone();
        for record in &mut doctored.steps[0].call_records {
            if matches!(record.purpose, CallPurpose::BeliefUpdate) {
                record.context = Context::user("not the real context");
            }
        }
        assert!(matches!(
            build_groups(&doctored, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default()),
            Err(GradingError::ContextMismatch { step: 1, .. })
        ));
    }

    #[test]
    fn regeneration_transport_failure_skips_and_stops() {
        let config = lock();
        let prompts = PromptSet::for_env(&config);
        let gateway = oracle_gateway(&config);
        let t = run_episode(&gateway, &config, &prompts, Regime::Abbel, 517, &RolloutOptions::default())
            .unwrap();
        assert!(t.env_steps_taken >= 2);
        // One good regeneration, then script exhaustion (transport failure):
        // the first group survives, the rest are skipped.
        let mut posterior = hypothesis_space(&config);
        let step = &t.steps[0];
        let (feedback, _) = env::parse_observation(&step.observation, &config).unwrap();
        posterior = posterior
            .filter(&HistoryEntry { guess: step.guess.clone().unwrap(), feedback });
        let body = render_projection(&posterior.project().unwrap(), &config);
        let regenerator = mock_gateway(vec![format!("<belief>{body}</belief>")], false);
        let groups = build_groups(&t, &prompts, &regenerator, &ReferenceParser, &GradingOptions::default())
            .unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].grades, (1, 1));
    }

    /// The LLM-backed parser feeds the model's rewrite through the reference
    /// grammar.
    #[test]
    fn llm_parser_reads_the_rewritten_form() {
        let config = lock();
        let truth = misplaced_zero_truth();
        let rewrite = render_projection(&truth, &config);
        let gateway = mock_gateway(vec![rewrite], true);
        let parser = LlmParser::new(&gateway);
        let parsed = parser.parse("free-form prose about the lock", &config).unwrap();
        assert_eq!(grade(&parsed, &truth), 1);

        // Transport failures surface as parser errors, never as grades.
        let dead = mock_gateway(vec![], false);
        let parser = LlmParser::new(&dead);
        assert!(matches!(
            parser.parse("anything", &config),
            Err(ParserError::Transport(_))
        ));
    }

    #[test]
    fn belief_group_serialization_round_trips() {
        let group = BeliefGroup {
            trajectory_id: "lock-abbel-s1-r0".to_string(),
            step_index: 2,
            context: Context::user("ctx"),
            original_belief: "Position 1: 3".to_string(),
            regenerated_belief: "Position 1: 4".to_string(),
            grades: (1, 0),
        };
        let json = serde_json::to_string(&group).unwrap();
        let back: BeliefGroup = serde_json::from_str(&json).unwrap();
        assert_eq!(back, group);
    }
}
