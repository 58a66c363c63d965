//! Harness for running and evaluating language agents that act through
//! natural-language belief states.
//!
//! The agent plays deterministic guessing games (combination lock, Wordle,
//! Mastermind) under three interaction regimes: a belief-state bottleneck
//! (the model is called twice per step — update a written belief, then act
//! on that belief alone), a full-history baseline, and a prompted hybrid
//! that sees both history and belief. Everything downstream of a rollout is
//! exactly reproducible: beliefs are graded against exact posteriors,
//! rewards and group-relative advantages are computed for an external
//! trainer, and every context is stored byte-for-byte so transcripts can be
//! replayed and re-graded offline.
//!
//! Modules, bottom-up:
//! - [`env`] — game rules, feedback rendering, seeded task sampling
//! - [`posterior`] — exact candidate-set posteriors and their canonical
//!   projection (the grading ground truth)
//! - [`prompt`] — templates, context assembly, tagged-output parsing
//! - [`gateway`] — completion backends (HTTP, scripted mock, exact-posterior
//!   oracle lives in [`rollout`]), retries, token accounting
//! - [`rollout`] — episode execution under each regime, transcripts, replay
//!   verification
//! - [`grading`] — belief parsing and size-two group grading against the
//!   posterior projection
//! - [`reward`] — outcome rewards, regret curves, length penalties,
//!   group-relative advantages
//! - [`metrics`] — batch reports: success rate with SEM, per-step token and
//!   memory curves
//! - [`store`] — line-delimited persistence and the training-batch export
//! - [`config`] — the TOML harness configuration tying it all together

pub mod config;
pub mod env;
pub mod gateway;
pub mod grading;
pub mod metrics;
pub mod posterior;
pub mod prompt;
pub mod reward;
pub mod rollout;
pub mod store;

pub use config::HarnessConfig;
pub use env::{EnvConfig, EnvKind, Guess, Observation, SecretState, StructuredFeedback};
pub use gateway::{CompletionBackend, CompletionRequest, CompletionResult, Gateway};
pub use prompt::{Context, PromptSet};
pub use rollout::{Regime, Termination, Trajectory};
