//! Harness configuration: one TOML file describing the environment, the
//! completion backend, prompt overrides, rollout defaults, and reward
//! options.
//!
//! Everything is optional; the defaults run the built-in combination-lock
//! training environment against the deterministic oracle backend. The API
//! key is the one value never stored in the file — only the name of the
//! environment variable holding it.

use crate::env::EnvConfig;
use crate::gateway::{CompletionBackend, Gateway, HttpBackend, MockBackend, RetryPolicy};
use crate::prompt::{PromptError, PromptSet};
use crate::reward::{RegretConvention, RewardOptions};
use crate::rollout::{OracleBackend, Regime, RolloutOptions};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid config at {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("unknown environment preset '{0}'")]
    UnknownEnv(String),
    #[error("unknown environment kind '{0}' (expected combination-lock, wordle, or mastermind)")]
    UnknownKind(String),
    #[error("[env] must name a preset or set kind")]
    MissingEnv,
    #[error("environment is invalid: {0}")]
    BadEnv(#[from] crate::env::ConfigError),
    #[error("failed to read word list {path}: {source}")]
    WordList {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unknown backend kind '{0}' (expected oracle, mock, or http)")]
    UnknownBackend(String),
    #[error("backend '{kind}' requires {field}")]
    MissingBackendField { kind: String, field: &'static str },
    #[error(transparent)]
    Prompts(#[from] PromptError),
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// A built-in preset: combination-lock-train, combination-lock-train-9,
    /// combination-lock-test, wordle, or mastermind.
    pub name: Option<String>,
    /// Explicit kind when not using a preset.
    pub kind: Option<String>,
    /// Overrides applied on top of the preset or kind defaults.
    pub vocabulary: Option<String>,
    pub code_length: Option<usize>,
    pub horizon: Option<usize>,
    /// Wordle: path to a newline-separated word list.
    pub word_list_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrySection {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        let policy = RetryPolicy::default();
        RetrySection {
            max_attempts: policy.max_attempts,
            base_delay_ms: policy.base_delay_ms,
            multiplier: policy.multiplier,
            max_delay_ms: policy.max_delay_ms,
        }
    }
}

impl RetrySection {
    fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay_ms: self.base_delay_ms,
            multiplier: self.multiplier,
            max_delay_ms: self.max_delay_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// oracle (deterministic reference policy), mock (scripted), or http.
    pub kind: String,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u64,
    /// Concurrent request cap.
    pub max_in_flight: usize,
    /// Scripted replies for the mock backend.
    pub script: Vec<String>,
    /// Whether the mock script repeats from the start when exhausted.
    pub cycle: bool,
    pub retry: RetrySection,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: "oracle".to_string(),
            model: None,
            endpoint: None,
            api_key_env: "ABBEL_API_KEY".to_string(),
            temperature: 1.0,
            max_output_tokens: 1024,
            max_in_flight: 4,
            script: Vec::new(),
            cycle: false,
            retry: RetrySection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Directory of prompt templates overriding the built-in set.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Rollouts per (config, seed) task — the advantage group size.
    pub rollouts_per_task: u32,
    pub parallelism: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection { rollouts_per_task: 2, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub regret_convention: RegretConvention,
    pub length_penalty_coefficient: f64,
    pub epsilon: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let options = RewardOptions::default();
        RewardSection {
            regret_convention: options.regret_convention,
            length_penalty_coefficient: options.length_penalty_coefficient,
            epsilon: options.epsilon,
        }
    }
}

// ---------------------------------------------------------------------------
// HarnessConfig
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub env: EnvSection,
    pub backend: BackendSection,
    pub prompts: PromptSection,
    pub rollout: RolloutSection,
    pub rewards: RewardSection,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<HarnessConfig, HarnessConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| HarnessConfigError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|source| HarnessConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })
    }

    /// The environment this config describes: a preset or an explicit kind,
    /// with any field overrides applied and re-validated.
    pub fn resolve_env(&self) -> Result<EnvConfig, HarnessConfigError> {
        let mut config = match (&self.env.name, &self.env.kind) {
            (Some(name), _) => EnvConfig::builtin(name)
                .ok_or_else(|| HarnessConfigError::UnknownEnv(name.clone()))?,
            (None, Some(kind)) => match kind.as_str() {
                "combination-lock" => EnvConfig::builtin("combination-lock-train").unwrap(),
                "wordle" => EnvConfig::builtin("wordle").unwrap(),
                "mastermind" => EnvConfig::builtin("mastermind").unwrap(),
                other => return Err(HarnessConfigError::UnknownKind(other.to_string())),
            },
            (None, None) => return Err(HarnessConfigError::MissingEnv),
        };
        if let Some(vocabulary) = &self.env.vocabulary {
            config.vocabulary = vocabulary.chars().collect();
        }
        if let Some(code_length) = self.env.code_length {
            config.code_length = code_length;
        }
        if let Some(horizon) = self.env.horizon {
            config.horizon = horizon;
        }
        if let Some(path) = &self.env.word_list_path {
            let text = fs::read_to_string(path).map_err(|source| {
                HarnessConfigError::WordList { path: path.clone(), source }
            })?;
            let words: Vec<String> =
                text.lines().map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect();
            config.word_list = Some(words);
        }
        config.validate()?;
        Ok(config)
    }

    /// The prompt set: built-in templates for the environment, or the
    /// override directory when one is configured.
    pub fn resolve_prompts(&self, env: &EnvConfig) -> Result<PromptSet, HarnessConfigError> {
        match &self.prompts.dir {
            Some(dir) => Ok(PromptSet::from_dir(dir, env)?),
            None => Ok(PromptSet::for_env(env)),
        }
    }

    /// A ready gateway over the configured backend. The oracle needs to
    /// know which regime's contexts it will read, hence the parameter.
    pub fn build_gateway(
        &self,
        env: &EnvConfig,
        regime: Regime,
    ) -> Result<Gateway, HarnessConfigError> {
        let b = &self.backend;
        let backend: Arc<dyn CompletionBackend> = match b.kind.as_str() {
            "oracle" => Arc::new(OracleBackend::new(env.clone(), regime)),
            "mock" => {
                let mock = MockBackend::new(b.script.clone());
                Arc::new(if b.cycle { mock.cycling() } else { mock })
            }
            "http" => {
                let endpoint = b.endpoint.as_ref().ok_or_else(|| {
                    HarnessConfigError::MissingBackendField {
                        kind: b.kind.clone(),
                        field: "endpoint",
                    }
                })?;
                let model = b.model.as_ref().ok_or_else(|| {
                    HarnessConfigError::MissingBackendField {
                        kind: b.kind.clone(),
                        field: "model",
                    }
                })?;
                Arc::new(HttpBackend::new(endpoint, model, &b.api_key_env))
            }
            other => return Err(HarnessConfigError::UnknownBackend(other.to_string())),
        };
        Ok(Gateway::new(backend, b.retry.policy(), b.max_in_flight.max(1)))
    }

    /// Per-episode options derived from the backend section.
    pub fn rollout_options(&self, rollout_index: u32) -> RolloutOptions {
        RolloutOptions {
            temperature: self.backend.temperature,
            max_output_tokens: self.backend.max_output_tokens,
            rollout_index,
        }
    }

    pub fn reward_options(&self) -> RewardOptions {
        RewardOptions {
            regret_convention: self.rewards.regret_convention,
            length_penalty_coefficient: self.rewards.length_penalty_coefficient,
            epsilon: self.rewards.epsilon,
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::CompletionRequest;
    use crate::prompt::Context;
    use std::io::Write as _;

    #[test]
    fn defaults_run_the_lock_against_the_oracle() {
        let config = HarnessConfig::default();
        assert_eq!(config.backend.kind, "oracle");
        // The default section has no env name; a caller that wants the
        // default preset names it.
        assert!(matches!(config.resolve_env(), Err(HarnessConfigError::MissingEnv)));

        let mut named = config.clone();
        named.env.name = Some("combination-lock-train".to_string());
        let env = named.resolve_env().unwrap();
        assert_eq!(env.slug(), "lock-l3-v10-h12");
        let gateway = named.build_gateway(&env, Regime::Abbel).unwrap();
        let reply = gateway
            .complete(&CompletionRequest {
                context: named
                    .resolve_prompts(&env)
                    .map(|p| crate::prompt::build_action_context(&p, &p.initial_belief, 1, env.horizon))
                    .unwrap(),
                temperature: 1.0,
                max_output_tokens: 64,
                seed_hint: Some(0),
            })
            .unwrap();
        assert!(reply.text.contains("<action>"));
    }

    #[test]
    fn toml_overrides_apply_on_top_of_presets() {
        let text = r#"
            [env]
            name = "combination-lock-train"
            horizon = 20
            vocabulary = "01234"

            [backend]
            kind = "mock"
            script = ["hello"]
            cycle = true
            temperature = 0.25
            max_output_tokens = 99

            [backend.retry]
            max_attempts = 5

            [rollout]
            rollouts_per_task = 4
            parallelism = 8

            [rewards]
            regret_convention = "exclude-solving-step"
            epsilon = 1e-5
        "#;
        let config: HarnessConfig = toml::from_str(text).unwrap();
        let env = config.resolve_env().unwrap();
        assert_eq!(env.horizon, 20);
        assert_eq!(env.vocabulary, vec!['0', '1', '2', '3', '4']);

        let gateway = config.build_gateway(&env, Regime::Vanilla).unwrap();
        let reply = gateway
            .complete(&CompletionRequest {
                context: Context::user("x"),
                temperature: 0.0,
                max_output_tokens: 8,
                seed_hint: None,
            })
            .unwrap();
        assert_eq!(reply.text, "hello");

        assert_eq!(config.backend.retry.max_attempts, 5);
        assert_eq!(config.rollout.rollouts_per_task, 4);
        let options = config.rollout_options(3);
        assert_eq!(options.temperature, 0.25);
        assert_eq!(options.max_output_tokens, 99);
        assert_eq!(options.rollout_index, 3);
        let rewards = config.reward_options();
        assert_eq!(rewards.regret_convention, RegretConvention::ExcludeSolvingStep);
        assert_eq!(rewards.epsilon, 1e-5);
        assert_eq!(rewards.length_penalty_coefficient, 0.01);
    }

    #[test]
    fn explicit_kinds_work_without_a_preset_name() {
        let text = r#"
            [env]
            kind = "mastermind"
            code_length = 3
            horizon = 8
        "#;
        let config: HarnessConfig = toml::from_str(text).unwrap();
        let env = config.resolve_env().unwrap();
        assert_eq!(env.slug(), "mastermind-l3-v10-h8");
    }

    #[test]
    fn unknown_names_kinds_and_backends_are_rejected() {
        let mut config = HarnessConfig::default();
        config.env.name = Some("tic-tac-toe".to_string());
        assert!(matches!(config.resolve_env(), Err(HarnessConfigError::UnknownEnv(_))));

        let mut config = HarnessConfig::default();
        config.env.kind = Some("sudoku".to_string());
        assert!(matches!(config.resolve_env(), Err(HarnessConfigError::UnknownKind(_))));

        let mut config = HarnessConfig::default();
        config.env.name = Some("wordle".to_string());
        config.backend.kind = "telepathy".to_string();
        let env = config.resolve_env().unwrap();
        assert!(matches!(
            config.build_gateway(&env, Regime::Abbel),
            Err(HarnessConfigError::UnknownBackend(_))
        ));

        // Unknown TOML keys are typos, not extensions.
        assert!(toml::from_str::<HarnessConfig>("[env]\nnmae = \"wordle\"").is_err());
    }

    #[test]
    fn http_backend_requires_endpoint_and_model() {
        let mut config = HarnessConfig::default();
        config.env.name = Some("combination-lock-train".to_string());
        config.backend.kind = "http".to_string();
        let env = config.resolve_env().unwrap();
        assert!(matches!(
            config.build_gateway(&env, Regime::Abbel),
            Err(HarnessConfigError::MissingBackendField { field: "endpoint", .. })
        ));
        config.backend.endpoint = Some("http://127.0.0.1:1/v1/chat/completions".to_string());
        assert!(matches!(
            config.build_gateway(&env, Regime::Abbel),
            Err(HarnessConfigError::MissingBackendField { field: "model", .. })
        ));
        config.backend.model = Some("test-model".to_string());
        assert!(config.build_gateway(&env, Regime::Abbel).is_ok());
    }

    #[test]
    fn custom_word_lists_load_from_disk() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "APPLE\n crane \nslate\n").unwrap();
        let mut config = HarnessConfig::default();
        config.env.name = Some("wordle".to_string());
        config.env.word_list_path = Some(file.path().to_path_buf());
        let env = config.resolve_env().unwrap();
        let words = env.word_list.as_ref().unwrap();
        assert_eq!(words, &["apple", "crane", "slate"]);

        // A bad override fails validation, not later at run time.
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "toolongword").unwrap();
        config.env.word_list_path = Some(bad.path().to_path_buf());
        assert!(matches!(config.resolve_env(), Err(HarnessConfigError::BadEnv(_))));
    }

    #[test]
    fn config_serializes_back_to_toml() {
        let mut config = HarnessConfig::default();
        config.env.name = Some("combination-lock-test".to_string());
        let text = toml::to_string_pretty(&config).unwrap();
        let back: HarnessConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
