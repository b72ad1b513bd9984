//! Model endpoints: OpenAI-compatible and Gemini-compatible HTTP APIs plus an
//! offline mock. Every request is a fresh single-turn conversation.

mod batch;
mod http;
mod mock;
mod rate;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{Phase, Stance};

pub use batch::{run_batch, schedule, BatchError, BatchSummary};
pub use http::HttpProvider;
pub use mock::{prompt_hash, AnswerTokens, MockProvider};
pub use rate::RateLimiter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatible,
    GeminiCompatible,
    Mock,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::OpenaiCompatible => "openai-compatible",
            ProviderKind::GeminiCompatible => "gemini-compatible",
            ProviderKind::Mock => "mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt `k + 1` is `backoff_ms[min(k - 1, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            backoff_ms: vec![500, 1_000, 2_000, 4_000, 8_000],
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, next_attempt: u32) -> Duration {
        if self.backoff_ms.is_empty() || next_attempt < 2 {
            return Duration::ZERO;
        }
        let i = ((next_attempt - 2) as usize).min(self.backoff_ms.len() - 1);
        Duration::from_millis(self.backoff_ms[i])
    }
}

/// A scripted mock output: one string for every round, or one per round (cycled).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedOutput {
    Fixed(String),
    PerRound(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum MockPolicy {
    AlwaysAffirm,
    AlwaysNegate,
    /// Echoes any injected opinion; answers from the seeded table otherwise.
    Sycophant,
    /// Answers from a seeded per-question table regardless of the prompt.
    Stubborn,
    /// With probability `p` returns an explainer, otherwise the stubborn answer.
    ExplainerRate { p: f64 },
    /// Output keyed by the SHA-256 hex digest of the prompt.
    Scripted { outputs: BTreeMap<String, ScriptedOutput> },
}

impl MockPolicy {
    /// Parses the shorthand used on the command line, e.g. `explainer-rate:0.1`.
    pub fn parse_shorthand(s: &str) -> Result<Self, ProviderError> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        Ok(match (name, arg) {
            ("always-affirm", None) => MockPolicy::AlwaysAffirm,
            ("always-negate", None) => MockPolicy::AlwaysNegate,
            ("sycophant", None) => MockPolicy::Sycophant,
            ("stubborn", None) => MockPolicy::Stubborn,
            ("explainer-rate", Some(p)) => MockPolicy::ExplainerRate {
                p: p.parse()
                    .map_err(|_| ProviderError::Config(format!("bad explainer rate {p:?}")))?,
            },
            _ => {
                return Err(ProviderError::Config(format!(
                    "unknown mock policy {s:?} (always-affirm, always-negate, sycophant, stubborn, explainer-rate:<p>)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if let MockPolicy::ExplainerRate { p } = self {
            if !(0.0..=1.0).contains(p) {
                return Err(ProviderError::Config(format!("explainer rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn default_rate() -> f64 {
    5.0
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_env: Option<String>,
    /// Requests per second.
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Decoding parameters merged verbatim into the request body.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockPolicy>,
}

impl ProviderConfig {
    pub fn mock(policy: MockPolicy) -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            credentials_env: None,
            rate_limit: 1_000_000.0,
            retry: RetryPolicy {
                max_attempts: 1,
                backoff_ms: vec![],
            },
            max_in_flight: 1,
            timeout_secs: default_timeout(),
            params: Default::default(),
            mock: Some(policy),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, ProviderError> {
        let c: Self = serde_json::from_str(json).map_err(|e| ProviderError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.rate_limit > 0.0) {
            return Err(ProviderError::Config("rate limit must be > 0".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(ProviderError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(ProviderError::Config("max_in_flight must be >= 1".into()));
        }
        match self.kind {
            ProviderKind::Mock => self
                .mock
                .as_ref()
                .ok_or_else(|| ProviderError::Config("mock provider needs a mock policy".into()))?
                .validate(),
            _ if self.endpoint.is_empty() || self.model.is_empty() => Err(ProviderError::Config(
                "live providers need an endpoint and a model".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// One prompt with the labels needed to route and persist its answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRequest {
    pub question_id: u32,
    pub round: u32,
    pub phase: Phase,
    pub language: String,
    pub prompt: String,
    /// Opinion injected into an opposing prompt.
    pub stance: Option<Stance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Refused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    /// Model text verbatim; for refusals, whatever explanation the provider gave.
    pub text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub outcome: Outcome,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String, attempts: u32 },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
}

impl ProviderError {
    pub fn attempts(&self) -> u32 {
        match self {
            ProviderError::Transport { attempts, .. } | ProviderError::Rejected { attempts, .. } => *attempts,
            _ => 1,
        }
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<Completion, ProviderError>;

    /// Checks that every request can be served before anything is sent.
    fn preflight(&self, _requests: &[PromptRequest]) -> Result<(), ProviderError> {
        Ok(())
    }
}

/// Builds the provider described by `config`. Mock providers need the
/// language's answer tokens and the run seed.
pub fn build_provider(
    config: &ProviderConfig,
    tokens: AnswerTokens,
    seed: u64,
) -> Result<Box<dyn Provider>, ProviderError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Box::new(MockProvider::new(
            config.mock.clone().expect("validated"),
            tokens,
            seed,
        )),
        _ => Box::new(HttpProvider::new(config.clone())?),
    })
}
