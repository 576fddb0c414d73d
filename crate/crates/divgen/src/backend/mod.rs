//! Completion backends.
//!
//! A [`Backend`] turns a prompt into `n` completions. [`MockBackend`] runs the
//! sampling transforms locally over the n-gram model; [`OpenAiBackend`]
//! forwards temperature, top-p and logit bias to an OpenAI-compatible
//! `/completions` endpoint.

mod bpe;
mod mock;
mod openai;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{BiasMap, SamplingParams, TokenId};

pub use bpe::{BpeTokenizer, WhitespaceTokenizer};
pub use mock::{MockBackend, MockTokenizer};
pub use openai::{OpenAiBackend, OpenAiConfig, RetryPolicy};

/// Completions generated per prompt.
pub const DEFAULT_COMPLETIONS: usize = 20;

/// Generated text sits inside double quotes, one instance per line.
pub fn default_stop_sequences() -> Vec<String> {
    vec!["\"".to_string(), "\n".to_string()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n_completions: usize,
    pub params: SamplingParams,
    pub logit_bias: BiasMap,
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            n_completions: DEFAULT_COMPLETIONS,
            params: SamplingParams::default(),
            logit_bias: BiasMap::new(),
            stop_sequences: default_stop_sequences(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_completions == 0 {
            return Err(Error::InvalidRequest("n_completions must be at least 1".into()));
        }
        if self.logit_bias.len() > BiasMap::MAX_ENTRIES {
            return Err(Error::InvalidRequest("logit_bias exceeds 100 entries".into()));
        }
        self.params.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub texts: Vec<String>,
    pub usage: TokenUsage,
    pub backend_id: String,
    /// HTTP attempts spent, 1 for local backends.
    pub attempts: u32,
}

/// Maps text to the token ids a backend understands.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn decode(&self, ids: &[TokenId]) -> String;
    /// Whether ids from this tokenizer may key a `logit_bias` sent to the
    /// backend.
    fn bias_compatible(&self) -> bool;
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn tokenizer(&self) -> &dyn Tokenizer;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse>;
}

/// Tokens of a completion as recorded in the frequency ledger.
pub fn tokenize_for_ledger(backend: &dyn Backend, text: &str) -> Vec<TokenId> {
    backend.tokenizer().encode(text)
}

/// Cuts `text` at the earliest stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// One line of the request log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub call: u64,
    pub iteration: u64,
    pub label: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

/// Append-only JSON-lines log of every backend call.
pub struct RequestLog {
    out: BufWriter<File>,
    calls: u64,
}

impl RequestLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            calls: 0,
        })
    }

    /// Opens for appending, continuing the call counter after `existing_calls`.
    pub fn append(path: &Path, existing_calls: u64) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            calls: existing_calls,
        })
    }

    pub fn record(
        &mut self,
        iteration: u64,
        label: &str,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> Result<()> {
        self.calls += 1;
        let record = RequestRecord {
            call: self.calls,
            iteration,
            label: label.to_string(),
            request: request.clone(),
            response: response.clone(),
        };
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<RequestRecord>> {
        let raw = std::fs::read_to_string(path)?;
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}
