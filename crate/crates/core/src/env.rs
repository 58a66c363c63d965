//! Deterministic guessing-game environments.
//!
//! Three games share one interface: Combination Lock (short codes of unique
//! characters with per-position feedback), Wordle (five-letter words with the
//! classic duplicate-letter rule), and Mastermind (digit codes with
//! exact/partial match counts). All dynamics are pure functions of
//! `(state, guess, config)`, so any episode can be replayed and re-verified
//! byte for byte from its seed.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

/// Bundled five-letter answer list used by the built-in Wordle config.
const WORDLE_ANSWERS_RAW: &str = include_str!("../data/wordle_answers.txt");

/// Ordinal words used in Wordle feedback lines ("First letter, ...").
const ORDINALS: [&str; 12] = [
    "First", "Second", "Third", "Fourth", "Fifth", "Sixth", "Seventh", "Eighth", "Ninth",
    "Tenth", "Eleventh", "Twelfth",
];

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which game the config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    CombinationLock,
    Wordle,
    Mastermind,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::CombinationLock => write!(f, "combination-lock"),
            EnvKind::Wordle => write!(f, "wordle"),
            EnvKind::Mastermind => write!(f, "mastermind"),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "combination-lock" | "combination_lock" | "lock" => Ok(EnvKind::CombinationLock),
            "wordle" => Ok(EnvKind::Wordle),
            "mastermind" => Ok(EnvKind::Mastermind),
            other => Err(ConfigError::UnknownKind(other.to_string())),
        }
    }
}

/// Full description of a game instance family: the dynamics plus the
/// hypothesis space every episode samples its secret from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Allowed characters, in canonical order. This order defines the
    /// enumeration order of the hypothesis space and all canonical renderings.
    #[serde(with = "chars_as_string")]
    pub vocabulary: Vec<char>,
    pub code_length: usize,
    /// Maximum number of environment steps per episode.
    pub horizon: usize,
    /// Whether every character of a secret or guess must be distinct.
    pub unique_chars: bool,
    /// Wordle only: the set of legal words (secrets and guesses).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_list: Option<Vec<String>>,
}

mod chars_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(chars: &[char], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&chars.iter().collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<char>, D::Error> {
        Ok(String::deserialize(d)?.chars().collect())
    }
}

impl EnvConfig {
    /// Combination lock over `vocabulary` with codes of `code_length` unique
    /// characters.
    pub fn combination_lock(
        vocabulary: &str,
        code_length: usize,
        horizon: usize,
    ) -> Result<Self, ConfigError> {
        let config = EnvConfig {
            kind: EnvKind::CombinationLock,
            vocabulary: vocabulary.chars().collect(),
            code_length,
            horizon,
            unique_chars: true,
            word_list: None,
        };
        config.validate()?;
        Ok(config)
    }

    /// Mastermind over `vocabulary`; characters may repeat.
    pub fn mastermind(
        vocabulary: &str,
        code_length: usize,
        horizon: usize,
    ) -> Result<Self, ConfigError> {
        let config = EnvConfig {
            kind: EnvKind::Mastermind,
            vocabulary: vocabulary.chars().collect(),
            code_length,
            horizon,
            unique_chars: false,
            word_list: None,
        };
        config.validate()?;
        Ok(config)
    }

    /// Wordle over lowercase a-z with the given legal-word list. All words
    /// must share one length, which becomes the code length.
    pub fn wordle(words: Vec<String>, horizon: usize) -> Result<Self, ConfigError> {
        let code_length = words.first().map(|w| w.chars().count()).unwrap_or(0);
        let mut words = words;
        words.sort();
        words.dedup();
        let config = EnvConfig {
            kind: EnvKind::Wordle,
            vocabulary: ('a'..='z').collect(),
            code_length,
            horizon,
            unique_chars: false,
            word_list: Some(words),
        };
        config.validate()?;
        Ok(config)
    }

    /// The bundled five-letter answer list.
    pub fn bundled_words() -> &'static [String] {
        static WORDS: OnceLock<Vec<String>> = OnceLock::new();
        WORDS.get_or_init(|| {
            WORDLE_ANSWERS_RAW
                .lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect()
        })
    }

    /// Named presets runnable without a config file.
    pub fn builtin(name: &str) -> Option<EnvConfig> {
        match name {
            // 10-digit training vocabulary, 12-step horizon.
            "combination-lock-train" => Some(
                EnvConfig::combination_lock("0123456789", 3, 12).expect("valid preset"),
            ),
            // 9-digit training variant (drops '7').
            "combination-lock-train-9" => Some(
                EnvConfig::combination_lock("012345689", 3, 12).expect("valid preset"),
            ),
            // Disjoint 16-letter vocabulary, 16-step horizon.
            "combination-lock-test" => Some(
                EnvConfig::combination_lock("qawsedrftgyhujik", 3, 16).expect("valid preset"),
            ),
            "wordle" => Some(
                EnvConfig::wordle(EnvConfig::bundled_words().to_vec(), 6).expect("valid preset"),
            ),
            "mastermind" => Some(
                EnvConfig::mastermind("0123456789", 4, 12).expect("valid preset"),
            ),
            _ => None,
        }
    }

    /// Checks internal consistency; every constructor calls this.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.code_length == 0 {
            return Err(ConfigError::ZeroLength);
        }
        if self.horizon == 0 {
            return Err(ConfigError::ZeroHorizon);
        }
        if self.vocabulary.is_empty() {
            return Err(ConfigError::EmptyVocabulary);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &c in &self.vocabulary {
            if !seen.insert(c) {
                return Err(ConfigError::DuplicateVocabChar(c));
            }
        }
        match self.kind {
            EnvKind::CombinationLock => {
                if !self.unique_chars {
                    return Err(ConfigError::KindRequiresUnique(self.kind));
                }
            }
            EnvKind::Mastermind => {
                if self.unique_chars {
                    return Err(ConfigError::KindForbidsUnique(self.kind));
                }
            }
            EnvKind::Wordle => {
                let words = self
                    .word_list
                    .as_ref()
                    .ok_or(ConfigError::MissingWordList)?;
                if words.is_empty() {
                    return Err(ConfigError::MissingWordList);
                }
                for w in words {
                    if w.chars().count() != self.code_length {
                        return Err(ConfigError::WordLength {
                            word: w.clone(),
                            expected: self.code_length,
                        });
                    }
                    if let Some(c) = w.chars().find(|c| !self.vocabulary.contains(c)) {
                        return Err(ConfigError::WordOutOfVocabulary { word: w.clone(), c });
                    }
                }
            }
        }
        if self.unique_chars && self.code_length > self.vocabulary.len() {
            return Err(ConfigError::LengthExceedsVocabulary {
                code_length: self.code_length,
                vocabulary: self.vocabulary.len(),
            });
        }
        // Positional feedback spells out ordinals for Wordle lines.
        if self.kind == EnvKind::Wordle && self.code_length > ORDINALS.len() {
            return Err(ConfigError::LengthExceedsOrdinals(self.code_length));
        }
        Ok(())
    }

    /// Index of a character in the canonical vocabulary order.
    pub fn vocab_index(&self, c: char) -> Option<usize> {
        self.vocabulary.iter().position(|&v| v == c)
    }

    /// Short id component, e.g. `lock-l3-v10-h12`.
    pub fn slug(&self) -> String {
        let kind = match self.kind {
            EnvKind::CombinationLock => "lock",
            EnvKind::Wordle => "wordle",
            EnvKind::Mastermind => "mastermind",
        };
        match self.kind {
            EnvKind::Wordle => format!(
                "{kind}-l{}-n{}-h{}",
                self.code_length,
                self.word_list.as_ref().map(|w| w.len()).unwrap_or(0),
                self.horizon
            ),
            _ => format!(
                "{kind}-l{}-v{}-h{}",
                self.code_length,
                self.vocabulary.len(),
                self.horizon
            ),
        }
    }

    /// Stable identity string used to refuse cross-config comparisons.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.kind,
            self.vocabulary.iter().collect::<String>(),
            self.code_length,
            self.horizon,
            self.unique_chars,
            self.word_list.as_ref().map(|w| w.len()).unwrap_or(0),
        )
    }

    /// Enumerates the full hypothesis space in canonical order: vocabulary
    /// order per position (permutations when characters must be unique,
    /// tuples otherwise), sorted word list for Wordle.
    ///
    /// This order defines seed-to-secret assignment, so it must never change.
    pub fn enumerate_codes(&self) -> Vec<Vec<char>> {
        match self.kind {
            EnvKind::Wordle => self
                .word_list
                .as_ref()
                .map(|words| words.iter().map(|w| w.chars().collect()).collect())
                .unwrap_or_default(),
            _ => {
                let mut out = Vec::new();
                let mut current = Vec::with_capacity(self.code_length);
                self.enumerate_into(&mut current, &mut out);
                out
            }
        }
    }

    fn enumerate_into(&self, current: &mut Vec<char>, out: &mut Vec<Vec<char>>) {
        if current.len() == self.code_length {
            out.push(current.clone());
            return;
        }
        for &c in &self.vocabulary {
            if self.unique_chars && current.contains(&c) {
                continue;
            }
            current.push(c);
            self.enumerate_into(current, out);
            current.pop();
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown environment kind `{0}`")]
    UnknownKind(String),
    #[error("code length must be at least 1")]
    ZeroLength,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("vocabulary must not be empty")]
    EmptyVocabulary,
    #[error("vocabulary contains `{0}` more than once")]
    DuplicateVocabChar(char),
    #[error("{0} requires unique characters")]
    KindRequiresUnique(EnvKind),
    #[error("{0} allows repeated characters; unique_chars must be false")]
    KindForbidsUnique(EnvKind),
    #[error("wordle requires a non-empty word list")]
    MissingWordList,
    #[error("word `{word}` does not have length {expected}")]
    WordLength { word: String, expected: usize },
    #[error("word `{word}` contains `{c}` outside the vocabulary")]
    WordOutOfVocabulary { word: String, c: char },
    #[error("code length {code_length} exceeds vocabulary size {vocabulary} with unique characters")]
    LengthExceedsVocabulary { code_length: usize, vocabulary: usize },
    #[error("positional feedback supports codes up to length 12, got {0}")]
    LengthExceedsOrdinals(usize),
    #[error("hypothesis space is empty")]
    EmptySpace,
}

// ---------------------------------------------------------------------------
// Guesses
// ---------------------------------------------------------------------------

/// A validated guess: correct length, in-vocabulary, and satisfying the
/// game's uniqueness / word-list constraints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Guess {
    chars: Vec<char>,
}

impl Guess {
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

impl fmt::Display for Guess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_string())
    }
}

impl From<Guess> for String {
    fn from(g: Guess) -> String {
        g.as_string()
    }
}

// Deserialization cannot re-validate against a config, so it only restores
// the characters; validity is re-established by `replay`.
impl TryFrom<String> for Guess {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty guess".to_string());
        }
        Ok(Guess { chars: s.chars().collect() })
    }
}

/// Why a candidate guess was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuessError {
    WrongLength { expected: usize, got: usize },
    RepeatedChar(char),
    OutOfVocabulary(char),
    NotAWord(String),
}

impl fmt::Display for GuessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuessError::WrongLength { expected, got } => {
                write!(f, "wrong length: expected {expected} characters, got {got}")
            }
            GuessError::RepeatedChar(c) => write!(f, "character '{c}' is repeated"),
            GuessError::OutOfVocabulary(c) => write!(f, "character '{c}' is not a valid character"),
            GuessError::NotAWord(w) => write!(f, "'{w}' is not in the word list"),
        }
    }
}

impl std::error::Error for GuessError {}

/// Validates raw characters as a guess for this game.
pub fn validate_guess(chars: &[char], config: &EnvConfig) -> Result<Guess, GuessError> {
    if chars.len() != config.code_length {
        return Err(GuessError::WrongLength {
            expected: config.code_length,
            got: chars.len(),
        });
    }
    for (i, &c) in chars.iter().enumerate() {
        if !config.vocabulary.contains(&c) {
            return Err(GuessError::OutOfVocabulary(c));
        }
        if config.unique_chars && chars[..i].contains(&c) {
            return Err(GuessError::RepeatedChar(c));
        }
    }
    if let Some(words) = &config.word_list {
        let word: String = chars.iter().collect();
        if !words.iter().any(|w| w == &word) {
            return Err(GuessError::NotAWord(word));
        }
    }
    Ok(Guess { chars: chars.to_vec() })
}

// ---------------------------------------------------------------------------
// Feedback
// ---------------------------------------------------------------------------

/// Per-position verdict for positional-feedback games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mark {
    /// Character does not occur in the secret (or all its occurrences are
    /// already claimed by other guess positions).
    Absent,
    /// Character occurs in the secret, but not at this position.
    PresentWrongPosition,
    /// Character matches the secret at this position.
    CorrectPosition,
}

/// Machine-readable feedback; the text shown to agents is rendered from this.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructuredFeedback {
    /// One mark per guess position (Combination Lock, Wordle).
    Positional(Vec<Mark>),
    /// Aggregate counts only (Mastermind).
    Counts { exact: usize, partial: usize },
}

/// Computes feedback for `guess` against `secret`.
///
/// Positional games use the classic two-pass rule: exact matches claim their
/// secret characters first, then remaining guess characters claim
/// `PresentWrongPosition` left to right while unclaimed occurrences last.
pub fn feedback(secret: &[char], guess: &[char], config: &EnvConfig) -> StructuredFeedback {
    debug_assert_eq!(secret.len(), guess.len());
    match config.kind {
        EnvKind::CombinationLock | EnvKind::Wordle => {
            let mut marks = vec![Mark::Absent; guess.len()];
            let mut unclaimed: std::collections::HashMap<char, usize> = std::collections::HashMap::new();
            for (i, &s) in secret.iter().enumerate() {
                if guess[i] == s {
                    marks[i] = Mark::CorrectPosition;
                } else {
                    *unclaimed.entry(s).or_insert(0) += 1;
                }
            }
            for (i, &g) in guess.iter().enumerate() {
                if marks[i] == Mark::CorrectPosition {
                    continue;
                }
                if let Some(n) = unclaimed.get_mut(&g) {
                    if *n > 0 {
                        *n -= 1;
                        marks[i] = Mark::PresentWrongPosition;
                    }
                }
            }
            StructuredFeedback::Positional(marks)
        }
        EnvKind::Mastermind => {
            let exact = secret.iter().zip(guess).filter(|(s, g)| s == g).count();
            let mut total = 0usize;
            for &c in &config.vocabulary {
                let in_secret = secret.iter().filter(|&&s| s == c).count();
                let in_guess = guess.iter().filter(|&&g| g == c).count();
                total += in_secret.min(in_guess);
            }
            StructuredFeedback::Counts { exact, partial: total - exact }
        }
    }
}

/// Renders feedback as the exact text shown to agents.
///
/// Lines are newline-separated, one per guess position for positional games;
/// Mastermind renders a single counts line.
pub fn render_observation(
    fb: &StructuredFeedback,
    guess: &[char],
    config: &EnvConfig,
) -> String {
    match fb {
        StructuredFeedback::Positional(marks) => {
            let lines: Vec<String> = marks
                .iter()
                .enumerate()
                .map(|(i, mark)| render_mark(*mark, guess[i], i, config.kind))
                .collect();
            lines.join("\n")
        }
        StructuredFeedback::Counts { exact, partial } => {
            format!("{exact} exact matches, {partial} partial matches")
        }
    }
}

fn render_mark(mark: Mark, c: char, index: usize, kind: EnvKind) -> String {
    match kind {
        EnvKind::CombinationLock | EnvKind::Mastermind => match mark {
            Mark::CorrectPosition => format!("{c} is in Position {}!", index + 1),
            Mark::PresentWrongPosition => {
                format!("{c} is not in Position {}, but is in the lock", index + 1)
            }
            Mark::Absent => format!("{c} is not in the lock"),
        },
        EnvKind::Wordle => {
            let ordinal = ORDINALS[index];
            match mark {
                Mark::CorrectPosition => format!(
                    "{ordinal} letter, {c}, is correct and in the correct position in the target word"
                ),
                Mark::PresentWrongPosition => format!(
                    "{ordinal} letter, {c}, is in the target word, but in a different position"
                ),
                Mark::Absent => format!("{ordinal} letter, {c}, is not in the target word"),
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObservationParseError {
    #[error("line {index} does not match any feedback form: `{line}`")]
    UnrecognizedLine { index: usize, line: String },
    #[error("expected {expected} feedback lines, got {got}")]
    WrongLineCount { expected: usize, got: usize },
    #[error("line {index} reports position {position}, expected {expected}")]
    PositionOutOfOrder { index: usize, position: usize, expected: usize },
}

/// Parses rendered feedback text back into its structured form; the inverse
/// of [`render_observation`]. Returns the marks plus the guess characters the
/// text mentions (counts feedback carries no characters).
pub fn parse_observation(
    text: &str,
    config: &EnvConfig,
) -> Result<(StructuredFeedback, Vec<char>), ObservationParseError> {
    match config.kind {
        EnvKind::Mastermind => {
            let line = text.trim();
            let caps = counts_re()
                .captures(line)
                .ok_or_else(|| ObservationParseError::UnrecognizedLine {
                    index: 0,
                    line: line.to_string(),
                })?;
            let exact = caps[1].parse().unwrap();
            let partial = caps[2].parse().unwrap();
            Ok((StructuredFeedback::Counts { exact, partial }, Vec::new()))
        }
        EnvKind::CombinationLock | EnvKind::Wordle => {
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() != config.code_length {
                return Err(ObservationParseError::WrongLineCount {
                    expected: config.code_length,
                    got: lines.len(),
                });
            }
            let mut marks = Vec::with_capacity(lines.len());
            let mut chars = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                let (mark, c, position) = parse_mark_line(line.trim(), config.kind)
                    .ok_or_else(|| ObservationParseError::UnrecognizedLine {
                        index: i,
                        line: line.to_string(),
                    })?;
                if let Some(p) = position {
                    if p != i + 1 {
                        return Err(ObservationParseError::PositionOutOfOrder {
                            index: i,
                            position: p,
                            expected: i + 1,
                        });
                    }
                }
                marks.push(mark);
                chars.push(c);
            }
            Ok((StructuredFeedback::Positional(marks), chars))
        }
    }
}

fn parse_mark_line(line: &str, kind: EnvKind) -> Option<(Mark, char, Option<usize>)> {
    match kind {
        EnvKind::CombinationLock | EnvKind::Mastermind => {
            if let Some(caps) = lock_correct_re().captures(line) {
                let c = caps[1].chars().next().unwrap();
                return Some((Mark::CorrectPosition, c, Some(caps[2].parse().unwrap())));
            }
            if let Some(caps) = lock_present_re().captures(line) {
                let c = caps[1].chars().next().unwrap();
                return Some((Mark::PresentWrongPosition, c, Some(caps[2].parse().unwrap())));
            }
            if let Some(caps) = lock_absent_re().captures(line) {
                let c = caps[1].chars().next().unwrap();
                return Some((Mark::Absent, c, None));
            }
            None
        }
        EnvKind::Wordle => {
            let caps = wordle_re().captures(line)?;
            let position = ORDINALS.iter().position(|o| *o == &caps[1])? + 1;
            let c = caps[2].chars().next().unwrap();
            let mark = match &caps[3] {
                "is correct and in the correct position in the target word" => {
                    Mark::CorrectPosition
                }
                "is in the target word, but in a different position" => Mark::PresentWrongPosition,
                "is not in the target word" => Mark::Absent,
                _ => return None,
            };
            Some((mark, c, Some(position)))
        }
    }
}

macro_rules! cached_regex {
    ($name:ident, $pattern:expr) => {
        fn $name() -> &'static regex::Regex {
            static RE: OnceLock<regex::Regex> = OnceLock::new();
            RE.get_or_init(|| regex::Regex::new($pattern).unwrap())
        }
    };
}

cached_regex!(counts_re, r"^(\d+) exact matches, (\d+) partial matches$");
cached_regex!(lock_correct_re, r"^(.) is in Position (\d+)!$");
cached_regex!(lock_present_re, r"^(.) is not in Position (\d+), but is in the lock$");
cached_regex!(lock_absent_re, r"^(.) is not in the lock$");
cached_regex!(
    wordle_re,
    r"^(\w+) letter, (.), (is correct and in the correct position in the target word|is in the target word, but in a different position|is not in the target word)$"
);

// ---------------------------------------------------------------------------
// Episode state and stepping
// ---------------------------------------------------------------------------

/// What one guess produced: the feedback text agents see plus its
/// machine-readable form and the step count after the guess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub structured: StructuredFeedback,
    /// Number of environment steps taken once this observation exists.
    pub step_after: usize,
}

/// Hidden episode state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretState {
    pub secret: Guess,
    /// Environment steps taken so far.
    pub step: usize,
    pub solved: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode already finished")]
    AlreadyDone,
    #[error(transparent)]
    InvalidGuess(#[from] GuessError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Deterministically assigns a secret to `seed` by indexing the canonical
/// hypothesis-space enumeration (`seed mod space size`, non-negative).
pub fn sample_task(config: &EnvConfig, seed: i64) -> Result<SecretState, EnvError> {
    config.validate()?;
    let codes = config.enumerate_codes();
    if codes.is_empty() {
        return Err(ConfigError::EmptySpace.into());
    }
    let index = seed.rem_euclid(codes.len() as i64) as usize;
    Ok(SecretState {
        secret: Guess { chars: codes[index].clone() },
        step: 0,
        solved: false,
    })
}

/// Applies one guess: returns the successor state, the observation, whether
/// the episode is over, and whether it ended in success.
///
/// The guess is re-validated so replays catch corrupted transcripts.
pub fn step(
    state: &SecretState,
    guess: &Guess,
    config: &EnvConfig,
) -> Result<(SecretState, Observation, bool, bool), EnvError> {
    if state.solved || state.step >= config.horizon {
        return Err(EnvError::AlreadyDone);
    }
    let guess = validate_guess(guess.chars(), config)?;
    let fb = feedback(state.secret.chars(), guess.chars(), config);
    let solved = guess.chars() == state.secret.chars();
    let next = SecretState {
        secret: state.secret.clone(),
        step: state.step + 1,
        solved,
    };
    let observation = Observation {
        text: render_observation(&fb, guess.chars(), config),
        structured: fb,
        step_after: next.step,
    };
    let done = solved || next.step >= config.horizon;
    Ok((next, observation, done, solved))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
