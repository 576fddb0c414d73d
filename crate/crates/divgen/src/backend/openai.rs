use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backend::{
    truncate_at_stop, Backend, CompletionRequest, CompletionResponse, Tokenizer, TokenUsage,
    WhitespaceTokenizer,
};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "OPENAI_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Exponential backoff for transient failures (transport errors, 429, 5xx).
#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` starts at 1.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }
}

#[derive(Clone, Debug)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl OpenAiConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads `OPENAI_API_KEY` and `OPENAI_BASE_URL`.
    pub fn from_env(model: impl Into<String>) -> Self {
        let mut config = Self::new(model);
        config.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                config.base_url = url;
            }
        }
        config
    }
}

#[derive(Serialize)]
struct ApiRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    frequency_penalty: f64,
    logit_bias: BTreeMap<String, f64>,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct ApiChoice {
    text: String,
    #[serde(default)]
    index: usize,
}

#[derive(Deserialize, Default)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

/// Client for an OpenAI-compatible `POST {base_url}/completions` endpoint.
pub struct OpenAiBackend {
    config: OpenAiConfig,
    agent: ureq::Agent,
    tokenizer: Box<dyn Tokenizer>,
    id: String,
}

impl OpenAiBackend {
    /// Uses `tokenizer` for the frequency ledger. Pass a
    /// [`BpeTokenizer`](crate::backend::BpeTokenizer) matching the served
    /// model so suppression ids mean the same thing on both sides.
    pub fn new(config: OpenAiConfig, tokenizer: Box<dyn Tokenizer>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let id = format!("openai:{}", config.model);
        Self {
            config,
            agent,
            tokenizer,
            id,
        }
    }

    /// Falls back to whitespace tokens. Logit suppression cannot be sent to
    /// the server in this mode.
    pub fn without_vocabulary(config: OpenAiConfig) -> Self {
        warn!(
            "no BPE vocabulary configured: ledger uses whitespace tokens and logit bias will not be sent"
        );
        Self::new(config, Box::new(WhitespaceTokenizer::new()))
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    /// Serialized request body. Identical requests give identical bytes.
    pub fn request_body(&self, request: &CompletionRequest) -> Result<String> {
        let body = ApiRequest {
            model: &self.config.model,
            prompt: &request.prompt,
            n: request.n_completions,
            max_tokens: request.params.max_tokens,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            frequency_penalty: request.params.frequency_penalty,
            logit_bias: request.logit_bias.to_api_map(),
            stop: &request.stop_sequences,
        };
        Ok(serde_json::to_string(&body)?)
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn parse(&self, request: &CompletionRequest, body: &str, attempts: u32) -> Result<CompletionResponse> {
        let mut parsed: ApiResponse = serde_json::from_str(body)
            .map_err(|e| Error::Malformed(format!("completion response: {e}")))?;
        parsed.choices.sort_by_key(|c| c.index);
        let texts = parsed
            .choices
            .into_iter()
            .take(request.n_completions)
            .map(|c| truncate_at_stop(&c.text, &request.stop_sequences).to_string())
            .collect();
        let usage = parsed.usage.unwrap_or_default();
        Ok(CompletionResponse {
            texts,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            backend_id: self.id.clone(),
            attempts,
        })
    }
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        let body = self.request_body(request)?;
        let url = self.endpoint();
        let policy = &self.config.retry;
        let mut last_error = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            let mut call = self
                .agent
                .post(&url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                call = call.header("Authorization", format!("Bearer {key}"));
            }
            let mut wait = policy.delay(attempt);
            match call.send(body.as_str()) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let retry_after = response
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok());
                    let text = response
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Malformed(format!("response body: {e}")))?;
                    match status {
                        200..=299 => return self.parse(request, &text, attempt),
                        429 | 500..=599 => {
                            if let Some(secs) = retry_after {
                                wait = Duration::from_secs_f64(secs.max(0.0)).min(policy.max_delay);
                            }
                            if attempt == policy.max_attempts.max(1) {
                                return Err(Error::Http { status, body: text });
                            }
                            last_error = format!("HTTP {status}");
                        }
                        _ => return Err(Error::Http { status, body: text }),
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < policy.max_attempts {
                warn!("completion attempt {attempt} failed ({last_error}); retrying in {wait:?}");
                thread::sleep(wait);
            }
        }
        Err(Error::Transport {
            attempts: policy.max_attempts.max(1),
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{BiasMap, TokenId};

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
            multiplier: 2.0,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }

    #[test]
    fn request_body_is_byte_stable() {
        let client = OpenAiBackend::new(
            OpenAiConfig::new("text-davinci-002"),
            Box::new(WhitespaceTokenizer::new()),
        );
        let mut req = CompletionRequest::new("Write a movie review");
        let mut bias = BiasMap::new();
        bias.insert(TokenId(10), -7.5).unwrap();
        bias.insert(TokenId(9), -1.25).unwrap();
        req.logit_bias = bias;
        let a = client.request_body(&req).unwrap();
        let b = client.request_body(&req.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a,
            r#"{"model":"text-davinci-002","prompt":"Write a movie review","n":20,"max_tokens":100,"temperature":1.0,"top_p":1.0,"frequency_penalty":0.02,"logit_bias":{"10":-7.5,"9":-1.25},"stop":["\"","\n"]}"#
        );
    }
}
