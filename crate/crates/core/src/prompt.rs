//! Context assembly and tagged-output parsing.
//!
//! Builds the exact texts agents see under each regime — belief-bottleneck
//! contexts (instructions + belief + last action + feedback + belief prompt),
//! full-history contexts, and retry messages — and parses the `<action>` /
//! `<belief>`-style tagged responses coming back. Templates ship as plain
//! text files with named placeholders and can be overridden from a directory.

use crate::env::{validate_guess, EnvConfig, EnvKind, Guess, GuessError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

// ---------------------------------------------------------------------------
// Contexts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// An ordered list of chat messages; the unit sent to completion backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub messages: Vec<Message>,
}

impl Context {
    /// Single-user-message context, the shape every builder produces.
    pub fn user(content: impl Into<String>) -> Self {
        Context {
            messages: vec![Message { role: Role::User, content: content.into() }],
        }
    }

    /// All message contents joined with blank lines, used for token
    /// accounting and content assertions.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

// ---------------------------------------------------------------------------
// Prompt sets
// ---------------------------------------------------------------------------

/// Every text template needed to drive one environment: instructions, the
/// initial belief sentinel, per-regime context templates, and retry messages.
///
/// Templates use `{placeholder}` slots. Environment parameters
/// (`{positions}`, `{code_length}`, `{vocabulary}`, `{char_slots}`,
/// `{horizon}`) and `{instructions}` are filled when the set is loaded;
/// `{belief}`, `{action}`, `{observation}`, `{history}`, `{step}`,
/// `{remaining}` are filled per call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub instructions: String,
    pub initial_belief: String,
    /// Belief-update context: `{belief}` (previous), `{action}`, `{observation}`.
    pub belief_context: String,
    /// Bottleneck action context: `{belief}`, `{step}`, `{remaining}`.
    pub action_context: String,
    /// Full-history action context: `{history}`, `{step}`, `{remaining}`.
    pub vanilla_context: String,
    /// History plus belief action context: `{history}`, `{belief}`, `{step}`, `{remaining}`.
    pub prompted_action_context: String,
    /// History plus belief update context: `{history}`, `{belief}`.
    pub prompted_belief_context: String,
    /// One history entry: `{action}`, `{observation}`.
    pub history_entry: String,
    /// Tag name the action payload is wrapped in (e.g. `action`, `Answer`).
    pub action_tag: String,
    /// Tag name the belief payload is wrapped in (e.g. `belief`, `BELIEF`).
    pub belief_tag: String,
    /// Retry message after an invalid action: `{reason}`.
    pub retry_action: String,
    /// Retry message after an invalid belief update: `{reason}`.
    pub retry_belief: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read prompt file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("prompt metadata file {path} is invalid: {source}")]
    Meta { path: String, source: toml::de::Error },
    #[error("template `{template}` is missing required placeholder {placeholder}")]
    MissingPlaceholder { template: &'static str, placeholder: &'static str },
}

#[derive(Deserialize)]
struct PromptMeta {
    action_tag: String,
    belief_tag: String,
    initial_belief: String,
}

struct RawTemplates {
    instructions: &'static str,
    belief_context: &'static str,
    action_context: &'static str,
    vanilla_context: &'static str,
    prompted_action_context: &'static str,
    prompted_belief_context: &'static str,
    history_entry: &'static str,
    retry_action: &'static str,
    retry_belief: &'static str,
    meta: &'static str,
}

macro_rules! builtin_templates {
    ($dir:literal) => {
        RawTemplates {
            instructions: include_str!(concat!("../data/prompts/", $dir, "/instructions.txt")),
            belief_context: include_str!(concat!("../data/prompts/", $dir, "/belief_context.txt")),
            action_context: include_str!(concat!("../data/prompts/", $dir, "/action_context.txt")),
            vanilla_context: include_str!(concat!("../data/prompts/", $dir, "/vanilla_context.txt")),
            prompted_action_context: include_str!(concat!(
                "../data/prompts/",
                $dir,
                "/prompted_action_context.txt"
            )),
            prompted_belief_context: include_str!(concat!(
                "../data/prompts/",
                $dir,
                "/prompted_belief_context.txt"
            )),
            history_entry: include_str!(concat!("../data/prompts/", $dir, "/history_entry.txt")),
            retry_action: include_str!(concat!("../data/prompts/", $dir, "/retry_action.txt")),
            retry_belief: include_str!(concat!("../data/prompts/", $dir, "/retry_belief.txt")),
            meta: include_str!(concat!("../data/prompts/", $dir, "/meta.toml")),
        }
    };
}

impl PromptSet {
    /// The built-in prompt set for an environment kind, with environment
    /// parameters already filled in.
    pub fn for_env(config: &EnvConfig) -> PromptSet {
        let raw = match config.kind {
            EnvKind::CombinationLock => builtin_templates!("combination_lock"),
            EnvKind::Wordle => builtin_templates!("wordle"),
            EnvKind::Mastermind => builtin_templates!("mastermind"),
        };
        let meta: PromptMeta = toml::from_str(raw.meta).expect("builtin meta.toml is valid");
        Self::assemble(&raw, meta, config).expect("builtin templates are valid")
    }

    /// Loads a prompt set from a directory holding the same files as the
    /// built-in sets (`instructions.txt`, `belief_context.txt`, ..., `meta.toml`).
    pub fn from_dir(dir: &Path, config: &EnvConfig) -> Result<PromptSet, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let instructions = read("instructions.txt")?;
        let belief_context = read("belief_context.txt")?;
        let action_context = read("action_context.txt")?;
        let vanilla_context = read("vanilla_context.txt")?;
        let prompted_action_context = read("prompted_action_context.txt")?;
        let prompted_belief_context = read("prompted_belief_context.txt")?;
        let history_entry = read("history_entry.txt")?;
        let retry_action = read("retry_action.txt")?;
        let retry_belief = read("retry_belief.txt")?;
        let meta_path = dir.join("meta.toml");
        let meta_text = read("meta.toml")?;
        let meta: PromptMeta = toml::from_str(&meta_text).map_err(|source| PromptError::Meta {
            path: meta_path.display().to_string(),
            source,
        })?;
        let raw = RawTemplatesOwned {
            instructions,
            belief_context,
            action_context,
            vanilla_context,
            prompted_action_context,
            prompted_belief_context,
            history_entry,
            retry_action,
            retry_belief,
        };
        Self::assemble_owned(raw, meta, config)
    }

    fn assemble(
        raw: &RawTemplates,
        meta: PromptMeta,
        config: &EnvConfig,
    ) -> Result<PromptSet, PromptError> {
        Self::assemble_owned(
            RawTemplatesOwned {
                instructions: raw.instructions.to_string(),
                belief_context: raw.belief_context.to_string(),
                action_context: raw.action_context.to_string(),
                vanilla_context: raw.vanilla_context.to_string(),
                prompted_action_context: raw.prompted_action_context.to_string(),
                prompted_belief_context: raw.prompted_belief_context.to_string(),
                history_entry: raw.history_entry.to_string(),
                retry_action: raw.retry_action.to_string(),
                retry_belief: raw.retry_belief.to_string(),
            },
            meta,
            config,
        )
    }

    fn assemble_owned(
        raw: RawTemplatesOwned,
        meta: PromptMeta,
        config: &EnvConfig,
    ) -> Result<PromptSet, PromptError> {
        let positions = (1..=config.code_length)
            .map(|i| format!("Position {i}"))
            .collect::<Vec<_>>()
            .join(", ");
        let vocabulary = config
            .vocabulary
            .iter()
            .map(|c| format!("'{c}'"))
            .collect::<Vec<_>>()
            .join(", ");
        let char_slots = (1..=config.code_length)
            .map(|i| format!("'char {i}'"))
            .collect::<Vec<_>>()
            .join(", ");
        let code_length = config.code_length.to_string();
        let horizon = config.horizon.to_string();
        let env_params = [
            ("positions", positions.as_str()),
            ("vocabulary", vocabulary.as_str()),
            ("char_slots", char_slots.as_str()),
            ("code_length", code_length.as_str()),
            ("horizon", horizon.as_str()),
        ];

        let instructions = fill(raw.instructions.trim_end(), &env_params);
        let load = |template: String| -> String {
            let with_env = fill(template.trim_end(), &env_params);
            fill(&with_env, &[("instructions", instructions.as_str())])
        };

        let belief_context = load(raw.belief_context);
        let action_context = load(raw.action_context);
        let vanilla_context = load(raw.vanilla_context);
        let prompted_action_context = load(raw.prompted_action_context);
        let prompted_belief_context = load(raw.prompted_belief_context);
        let history_entry = load(raw.history_entry);
        let retry_action = load(raw.retry_action);
        let retry_belief = load(raw.retry_belief);
        let set = PromptSet {
            instructions,
            initial_belief: meta.initial_belief,
            belief_context,
            action_context,
            vanilla_context,
            prompted_action_context,
            prompted_belief_context,
            history_entry,
            action_tag: meta.action_tag,
            belief_tag: meta.belief_tag,
            retry_action,
            retry_belief,
        };
        set.check_placeholders()?;
        Ok(set)
    }

    fn check_placeholders(&self) -> Result<(), PromptError> {
        let required: [(&'static str, &str, &[&'static str]); 6] = [
            ("belief_context", &self.belief_context, &["{belief}", "{action}", "{observation}"]),
            ("action_context", &self.action_context, &["{belief}"]),
            ("vanilla_context", &self.vanilla_context, &["{history}"]),
            (
                "prompted_action_context",
                &self.prompted_action_context,
                &["{history}", "{belief}"],
            ),
            (
                "prompted_belief_context",
                &self.prompted_belief_context,
                &["{history}", "{belief}"],
            ),
            ("history_entry", &self.history_entry, &["{action}", "{observation}"]),
        ];
        for (template, text, placeholders) in required {
            for placeholder in placeholders {
                if !text.contains(placeholder) {
                    return Err(PromptError::MissingPlaceholder {
                        template,
                        placeholder: placeholder.trim_matches(['{', '}']),
                    });
                }
            }
        }
        Ok(())
    }
}

struct RawTemplatesOwned {
    instructions: String,
    belief_context: String,
    action_context: String,
    vanilla_context: String,
    prompted_action_context: String,
    prompted_belief_context: String,
    history_entry: String,
    retry_action: String,
    retry_belief: String,
}

/// Replaces `{name}` slots found in `template` with their values, in a single
/// left-to-right pass. Substituted values are never rescanned, so model text
/// containing brace expressions cannot inject further substitutions.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find(['{', '}']) {
            Some(end) if after.as_bytes()[end] == b'}' => {
                let name = &after[..end];
                if let Some((_, value)) = values.iter().find(|(k, _)| *k == name) {
                    out.push_str(value);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Collapses blank-line runs left by empty optional slots and trims the ends.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut newlines = 0;
    for c in text.chars() {
        if c == '\n' {
            newlines += 1;
            if newlines <= 2 {
                out.push(c);
            }
        } else {
            newlines = 0;
            out.push(c);
        }
    }
    out.trim().to_string()
}

// ---------------------------------------------------------------------------
// Context builders
// ---------------------------------------------------------------------------

/// Belief-update context: instructions, previous belief, last action, its
/// feedback, and the belief prompt. Carries nothing else — this is the
/// bottleneck side of the two calls per step.
pub fn build_belief_context(
    prompts: &PromptSet,
    prev_belief: &str,
    action_text: &str,
    observation_text: &str,
) -> Context {
    let text = fill(
        &prompts.belief_context,
        &[
            ("belief", prev_belief),
            ("action", action_text),
            ("observation", observation_text),
        ],
    );
    Context::user(tidy(&text))
}

/// Action-selection context from the current belief alone. By construction
/// its bytes depend only on (prompts, belief, step, horizon).
pub fn build_action_context(
    prompts: &PromptSet,
    belief: &str,
    step: usize,
    horizon: usize,
) -> Context {
    debug_assert!(step >= 1 && step <= horizon);
    let text = fill(
        &prompts.action_context,
        &[
            ("belief", belief),
            ("step", &step.to_string()),
            ("horizon", &horizon.to_string()),
            ("remaining", &(horizon - step + 1).to_string()),
        ],
    );
    Context::user(tidy(&text))
}

/// Renders chronological (action, observation) pairs with the per-env entry
/// template, blank-line separated.
pub fn render_history(prompts: &PromptSet, history: &[(String, String)]) -> String {
    history
        .iter()
        .map(|(action, observation)| {
            fill(
                &prompts.history_entry,
                &[("action", action.as_str()), ("observation", observation.as_str())],
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Full-history action context. Without a belief this is the Vanilla
/// baseline; with one it is the belief-prompting variant (history retained,
/// belief appended before the action prompt).
pub fn build_history_context(
    prompts: &PromptSet,
    history: &[(String, String)],
    belief: Option<&str>,
    horizon: usize,
) -> Context {
    let step = history.len() + 1;
    let rendered = render_history(prompts, history);
    let template = match belief {
        Some(_) => &prompts.prompted_action_context,
        None => &prompts.vanilla_context,
    };
    let text = fill(
        template,
        &[
            ("history", rendered.as_str()),
            ("belief", belief.unwrap_or("")),
            ("step", &step.to_string()),
            ("horizon", &horizon.to_string()),
            ("remaining", &(horizon - step + 1).to_string()),
        ],
    );
    Context::user(tidy(&text))
}

/// Belief-update context for the belief-prompting regime: full history plus
/// the previous belief, then the belief prompt.
pub fn build_history_belief_context(
    prompts: &PromptSet,
    history: &[(String, String)],
    prev_belief: &str,
) -> Context {
    let rendered = render_history(prompts, history);
    let text = fill(
        &prompts.prompted_belief_context,
        &[("history", rendered.as_str()), ("belief", prev_belief)],
    );
    Context::user(tidy(&text))
}

/// Extends a context with the model's failed output and a retry message.
/// Retry exchanges are ephemeral: they live only in the retried call, never
/// in persistent history.
pub fn build_retry_context(base: &Context, raw_output: &str, retry_message: &str) -> Context {
    let mut messages = base.messages.clone();
    messages.push(Message { role: Role::Assistant, content: raw_output.to_string() });
    messages.push(Message { role: Role::User, content: retry_message.to_string() });
    Context { messages }
}

/// Renders the retry message for an invalid action.
pub fn action_retry_message(prompts: &PromptSet, reason: &str) -> String {
    fill(&prompts.retry_action, &[("reason", reason)])
}

/// Renders the retry message for an invalid belief update.
pub fn belief_retry_message(prompts: &PromptSet, reason: &str) -> String {
    fill(&prompts.retry_belief, &[("reason", reason)])
}

/// Canonical action text: the bracketed quoted list for character-code games
/// and the uppercase word for Wordle.
pub fn action_text(guess: &Guess, config: &EnvConfig) -> String {
    match config.kind {
        EnvKind::Wordle => guess.as_string().to_uppercase(),
        EnvKind::CombinationLock | EnvKind::Mastermind => {
            let inner = guess
                .chars()
                .iter()
                .map(|c| format!("'{c}'"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("[{inner}]")
        }
    }
}

// ---------------------------------------------------------------------------
// Tagged output parsing
// ---------------------------------------------------------------------------

/// Which payload a response was asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    Action,
    Belief,
    Answer,
}

impl TagKind {
    /// The payload kind an action tag name maps to.
    pub fn for_action_tag(tag: &str) -> TagKind {
        if tag.eq_ignore_ascii_case("answer") {
            TagKind::Answer
        } else {
            TagKind::Action
        }
    }
}

/// Why no payload could be extracted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagParseFailure {
    /// No opening tag anywhere in the text.
    MissingOpenTag,
    /// An opening tag without a matching closing tag after it.
    MissingCloseTag,
    /// A recognizable opening tag written with wrong brackets, e.g. `[action>`.
    MalformedOpenTag,
    /// A tag pair whose name is close to, but not, the expected one.
    UnknownTag { found: String },
    /// More than one complete tag pair.
    DuplicateTag,
}

impl fmt::Display for TagParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagParseFailure::MissingOpenTag => write!(f, "the opening tag is missing"),
            TagParseFailure::MissingCloseTag => write!(f, "the closing tag is missing"),
            TagParseFailure::MalformedOpenTag => write!(f, "the opening tag is malformed"),
            TagParseFailure::UnknownTag { found } => {
                write!(f, "unknown tag '{found}'")
            }
            TagParseFailure::DuplicateTag => write!(f, "the tag appears more than once"),
        }
    }
}

/// A parsed model response: optional think text, and either the payload or
/// the reason none could be extracted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub raw: String,
    pub think: Option<String>,
    pub payload: Option<String>,
    pub payload_tag: TagKind,
    pub failure: Option<TagParseFailure>,
}

/// Extracts the unique `<tag>...</tag>` pair from a raw response.
///
/// Matching is case-sensitive and requires exactly one complete pair; any
/// text outside the pair is ignored. Failures are encoded, never thrown, so
/// the result is total over arbitrary input.
pub fn parse_tagged(raw: &str, tag: &str, kind: TagKind) -> TaggedOutput {
    let think = extract_think(raw);
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut payloads = Vec::new();
    let mut cursor = 0;
    let mut dangling_open = false;
    while let Some(start) = raw[cursor..].find(&open) {
        let payload_start = cursor + start + open.len();
        match raw[payload_start..].find(&close) {
            Some(end) => {
                payloads.push(raw[payload_start..payload_start + end].trim().to_string());
                cursor = payload_start + end + close.len();
            }
            None => {
                dangling_open = true;
                break;
            }
        }
    }
    let failure = match payloads.len() {
        1 => None,
        0 if dangling_open => Some(TagParseFailure::MissingCloseTag),
        0 => Some(diagnose_missing(raw, tag, &close)),
        _ => Some(TagParseFailure::DuplicateTag),
    };
    let payload = if failure.is_none() { payloads.pop() } else { None };
    TaggedOutput {
        raw: raw.to_string(),
        think,
        payload,
        payload_tag: kind,
        failure,
    }
}

fn extract_think(raw: &str) -> Option<String> {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    let re = RE.get_or_init(|| regex::Regex::new(r"(?is)<think>(.*?)</think>").unwrap());
    re.captures(raw).map(|c| c[1].trim().to_string())
}

/// No complete pair was found; decide which malformation to report.
fn diagnose_missing(raw: &str, tag: &str, close: &str) -> TagParseFailure {
    if raw.contains(close) {
        // The closing tag exists. A wrong-bracket opener such as `[action>`
        // or `(action>` explains it; otherwise the opener is simply missing.
        let malformed = ['[', '(', '{']
            .iter()
            .any(|b| raw.contains(&format!("{b}{tag}>")))
            || raw.contains(&format!("<{tag}]"))
            || raw.contains(&format!("<{tag})"));
        return if malformed {
            TagParseFailure::MalformedOpenTag
        } else {
            TagParseFailure::MissingOpenTag
        };
    }
    // Look for a complete pair under a similar (misspelled or wrong-case)
    // name before giving up.
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    let re = RE.get_or_init(|| regex::Regex::new(r"<([A-Za-z][A-Za-z0-9_]*)>").unwrap());
    for caps in re.captures_iter(raw) {
        let found = &caps[1];
        if found == tag || found.eq_ignore_ascii_case("think") {
            continue;
        }
        if !raw.contains(&format!("</{found}>")) {
            continue;
        }
        if levenshtein(&found.to_lowercase(), &tag.to_lowercase()) <= 2 {
            return TagParseFailure::UnknownTag { found: found.to_string() };
        }
    }
    TagParseFailure::MissingOpenTag
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut current = vec![i + 1];
        for (j, &cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current.push(substitution.min(prev[j + 1] + 1).min(current[j] + 1));
        }
        prev = current;
    }
    prev[b.len()]
}

// ---------------------------------------------------------------------------
// Action validation
// ---------------------------------------------------------------------------

/// Why an extracted payload failed to become a guess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionError {
    /// The payload is not a recognizable character list or word.
    Unparseable,
    /// The payload parsed but violates the game's guess rules.
    Invalid(GuessError),
}

impl fmt::Display for ActionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionError::Unparseable => write!(f, "the action could not be parsed"),
            ActionError::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ActionError {}

/// Parses a tagged payload into characters and validates them as a guess.
///
/// Accepts the bracketed quoted list (`['8','6','9']`), bare
/// comma/whitespace-separated characters, a contiguous character run, or —
/// for Wordle — a plain word (case-insensitive).
pub fn validate_action(payload: &str, config: &EnvConfig) -> Result<Guess, ActionError> {
    let chars = extract_chars(payload, config).ok_or(ActionError::Unparseable)?;
    if chars.is_empty() {
        return Err(ActionError::Unparseable);
    }
    validate_guess(&chars, config).map_err(ActionError::Invalid)
}

fn extract_chars(payload: &str, config: &EnvConfig) -> Option<Vec<char>> {
    let trimmed = payload.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Some(open) = trimmed.find('[') {
        let close = trimmed.rfind(']')?;
        if close < open {
            return None;
        }
        return split_char_items(&trimmed[open + 1..close]);
    }
    if config.kind == EnvKind::Wordle {
        let word = strip_quotes(trimmed);
        if word.split_whitespace().count() != 1 || !word.chars().all(|c| c.is_alphabetic()) {
            return None;
        }
        return Some(word.to_lowercase().chars().collect());
    }
    if trimmed.contains(',') || trimmed.contains(char::is_whitespace) {
        return split_char_items(trimmed);
    }
    let bare = strip_quotes(trimmed);
    Some(bare.chars().collect())
}

fn split_char_items(inner: &str) -> Option<Vec<char>> {
    let mut chars = Vec::new();
    for item in inner.split([',', ' ', '\t', '\n']) {
        let item = strip_quotes(item.trim());
        if item.is_empty() {
            continue;
        }
        let mut it = item.chars();
        let c = it.next()?;
        if it.next().is_some() {
            return None; // multi-character item: not a character list
        }
        chars.push(c);
    }
    if chars.is_empty() {
        None
    } else {
        Some(chars)
    }
}

fn strip_quotes(s: &str) -> &str {
    let quotes: &[char] = &['\'', '"', '`'];
    s.trim_matches(quotes)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
