use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Completion, Outcome, PromptRequest, Provider, ProviderConfig, ProviderError, ProviderKind, RateLimiter};

const MAX_RETRY_AFTER: Duration = Duration::from_secs(60);

/// Blocking client for OpenAI-compatible and Gemini-compatible endpoints.
pub struct HttpProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

enum Attempt {
    Done(Completion),
    Retry { message: String, after: Option<Duration> },
    Fatal(ProviderError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        if config.kind == ProviderKind::Mock {
            return Err(ProviderError::Config("mock config passed to HTTP provider".into()));
        }
        let api_key = match &config.credentials_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let limiter = RateLimiter::new(config.rate_limit);
        Ok(Self {
            config,
            api_key,
            agent,
            limiter,
        })
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        match self.config.kind {
            ProviderKind::GeminiCompatible => {
                format!("{base}/models/{}:generateContent", self.config.model)
            }
            _ => format!("{base}/chat/completions"),
        }
    }

    /// Request body: a single user turn plus pass-through parameters.
    pub fn body(&self, prompt: &str) -> Value {
        let mut body = match self.config.kind {
            ProviderKind::GeminiCompatible => json!({
                "contents": [{ "parts": [{ "text": prompt }] }],
            }),
            _ => json!({
                "model": self.config.model,
                "messages": [{ "role": "user", "content": prompt }],
            }),
        };
        let obj = body.as_object_mut().expect("body is an object");
        for (k, v) in &self.config.params {
            obj.insert(k.clone(), v.clone());
        }
        body
    }

    fn attempt(&self, body: &Value, attempts: u32, started: Instant) -> Attempt {
        self.limiter.acquire();
        let mut req = self.agent.post(&self.url());
        if let Some(key) = &self.api_key {
            req = match self.config.kind {
                ProviderKind::GeminiCompatible => req.header("x-goog-api-key", key),
                _ => req.header("Authorization", &format!("Bearer {key}")),
            };
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    message: e.to_string(),
                    after: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(|s| Duration::from_secs(s).min(MAX_RETRY_AFTER));
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    message: format!("reading body: {e}"),
                    after: None,
                }
            }
        };
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(ProviderError::Auth(format!("HTTP {status}: {text}"))),
            429 | 500..=599 => {
                return Attempt::Retry {
                    message: format!("HTTP {status}: {text}"),
                    after: retry_after,
                }
            }
            _ => {
                return Attempt::Fatal(ProviderError::Rejected {
                    status,
                    body: text,
                    attempts,
                })
            }
        }
        let value: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(ProviderError::BadResponse(format!("{e}: {text}"))),
        };
        let parsed = match self.config.kind {
            ProviderKind::GeminiCompatible => parse_gemini(&value),
            _ => parse_openai(&value),
        };
        match parsed {
            Ok((text, outcome)) => Attempt::Done(Completion {
                text,
                latency_ms: started.elapsed().as_millis() as u64,
                attempts,
                outcome,
            }),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn parse_openai(v: &Value) -> Result<(String, Outcome), ProviderError> {
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::BadResponse(format!("no choices in {v}")))?;
    let content = choice.pointer("/message/content").and_then(Value::as_str);
    let refusal = choice.pointer("/message/refusal").and_then(Value::as_str);
    let filtered = choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter");
    match (content, refusal) {
        (_, Some(r)) => Ok((r.to_string(), Outcome::Refused)),
        (Some(c), None) if !filtered => Ok((c.to_string(), Outcome::Ok)),
        (c, None) if filtered => Ok((c.unwrap_or_default().to_string(), Outcome::Refused)),
        _ => Err(ProviderError::BadResponse(format!("no message content in {choice}"))),
    }
}

const GEMINI_BLOCKS: [&str; 5] = ["SAFETY", "PROHIBITED_CONTENT", "BLOCKLIST", "SPII", "RECITATION"];

fn parse_gemini(v: &Value) -> Result<(String, Outcome), ProviderError> {
    let Some(candidate) = v.pointer("/candidates/0") else {
        if let Some(reason) = v.pointer("/promptFeedback/blockReason").and_then(Value::as_str) {
            return Ok((reason.to_string(), Outcome::Refused));
        }
        return Err(ProviderError::BadResponse(format!("no candidates in {v}")));
    };
    let text: Option<String> = candidate
        .pointer("/content/parts")
        .and_then(Value::as_array)
        .map(|parts| {
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect()
        });
    let reason = candidate.get("finishReason").and_then(Value::as_str);
    match (text, reason) {
        (Some(t), _) if !t.is_empty() => Ok((t, Outcome::Ok)),
        (_, Some(r)) if GEMINI_BLOCKS.contains(&r) => Ok((r.to_string(), Outcome::Refused)),
        (Some(t), _) => Ok((t, Outcome::Ok)),
        _ => Err(ProviderError::BadResponse(format!("no text in {candidate}"))),
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &PromptRequest) -> Result<Completion, ProviderError> {
        let body = self.body(&request.prompt);
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.config.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay_before(attempt));
            }
            match self.attempt(&body, attempt, started) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { message, after } => {
                    log::debug!(
                        "question {} round {}: attempt {attempt} failed: {message}",
                        request.question_id,
                        request.round
                    );
                    if let Some(after) = after {
                        std::thread::sleep(after.saturating_sub(self.config.retry.delay_before(attempt + 1)));
                    }
                    last = message;
                }
            }
        }
        Err(ProviderError::Transport {
            attempts: self.config.retry.max_attempts,
            message: last,
        })
    }
}
