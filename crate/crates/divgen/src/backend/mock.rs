use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{truncate_at_stop, Backend, CompletionRequest, CompletionResponse, Tokenizer, TokenUsage};
use crate::error::{Error, Result};
use crate::mock_lm::{LabelConditionedLm, Vocabulary, EOS};
use crate::sampling::{
    apply_bias, apply_frequency_penalty, apply_temperature, apply_top_p, sample_token, TokenId,
};

/// Closed-vocabulary tokenizer of the mock model.
#[derive(Clone, Debug)]
pub struct MockTokenizer {
    vocab: Arc<Vocabulary>,
}

impl MockTokenizer {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        Self { vocab }
    }
}

impl Tokenizer for MockTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode(text)
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        self.vocab.decode(ids)
    }

    fn bias_compatible(&self) -> bool {
        true
    }
}

/// Offline backend that samples from a label-conditioned n-gram model.
///
/// The target label is read from the last `Elements:` (or
/// `Characteristics:`) line of the prompt and mapped back through the task's
/// label phrases. Each request seeds its own generator from
/// `params.rng_seed`, so identical requests give identical completions.
pub struct MockBackend {
    id: String,
    lm: LabelConditionedLm,
    phrases: Vec<(String, String)>,
    tokenizer: MockTokenizer,
}

impl MockBackend {
    /// `phrases` pairs each prompt phrase with the label it stands for.
    pub fn new(lm: LabelConditionedLm, phrases: Vec<(String, String)>) -> Self {
        let tokenizer = MockTokenizer::new(lm.vocabulary().clone());
        Self {
            id: "mock-ngram".to_string(),
            lm,
            phrases,
            tokenizer,
        }
    }

    pub fn language_model(&self) -> &LabelConditionedLm {
        &self.lm
    }

    fn target_label(&self, prompt: &str) -> Result<&str> {
        let phrase = prompt
            .lines()
            .rev()
            .find_map(|l| {
                l.strip_prefix("Elements: ")
                    .or_else(|| l.strip_prefix("Characteristics: "))
            })
            .ok_or_else(|| Error::InvalidRequest("prompt has no target label line".into()))?
            .trim();
        self.phrases
            .iter()
            .find(|(p, _)| p == phrase)
            .map(|(_, label)| label.as_str())
            .ok_or_else(|| Error::UnknownLabel(phrase.to_string()))
    }

    fn sample_sequence(
        &self,
        label: &str,
        request: &CompletionRequest,
        rng: &mut ChaCha8Rng,
    ) -> Result<(String, u64)> {
        let params = &request.params;
        let mut tokens: Vec<TokenId> = Vec::new();
        let mut seen: BTreeMap<TokenId, u32> = BTreeMap::new();
        let mut closed = false;
        while tokens.len() < params.max_tokens {
            let dist = self.lm.next_distribution(&tokens, label)?;
            let dist = apply_temperature(&dist, params.temperature)?;
            let dist = apply_bias(&dist, &request.logit_bias);
            let dist = apply_frequency_penalty(&dist, &seen, params.frequency_penalty);
            let dist = apply_top_p(&dist, params.top_p)?;
            let token = sample_token(&dist, rng);
            if token == EOS {
                closed = true;
                break;
            }
            *seen.entry(token).or_insert(0) += 1;
            tokens.push(token);
        }
        let used = tokens.len() as u64 + u64::from(closed);
        let mut text = self.lm.vocabulary().decode(&tokens);
        if closed {
            // the model closes the quoted instance like a real LLM would
            text.push_str("\"\n");
        }
        Ok((truncate_at_stop(&text, &request.stop_sequences).to_string(), used))
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        let label = self.target_label(&request.prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.params.rng_seed);
        let mut texts = Vec::with_capacity(request.n_completions);
        let mut completion_tokens = 0;
        for _ in 0..request.n_completions {
            let (text, used) = self.sample_sequence(label, request, &mut rng)?;
            completion_tokens += used;
            texts.push(text);
        }
        Ok(CompletionResponse {
            texts,
            usage: TokenUsage {
                prompt_tokens: request.prompt.split_whitespace().count() as u64,
                completion_tokens,
            },
            backend_id: self.id.clone(),
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock_lm::demo_task;
    use crate::sampling::BiasMap;

    fn backend() -> MockBackend {
        let task = demo_task();
        let lm = LabelConditionedLm::fit(task.corpus(), 3, 1.0).unwrap();
        let phrases = task
            .labels()
            .iter()
            .map(|l| (format!("expressing {l}"), l.clone()))
            .collect();
        MockBackend::new(lm, phrases)
    }

    fn prompt(label: &str) -> String {
        format!(
            "Write a emotional tweet to cover all following elements\nElements: expressing {label}\nEmotional tweet: \""
        )
    }

    #[test]
    fn same_request_same_texts() {
        let b = backend();
        let mut req = CompletionRequest::new(prompt("joy"));
        req.params.rng_seed = 99;
        let first = b.complete(&req).unwrap();
        let second = b.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.texts.len(), 20);
        assert!(first.texts.iter().all(|t| !t.contains('"')));
    }

    #[test]
    fn unknown_phrase_is_rejected() {
        let b = backend();
        let req = CompletionRequest::new("Elements: expressing boredom\nTweet: \"");
        assert!(matches!(b.complete(&req), Err(Error::UnknownLabel(_))));
        let req = CompletionRequest::new("nothing useful");
        assert!(b.complete(&req).is_err());
    }

    #[test]
    fn tokenizer_round_trip() {
        let b = backend();
        let tok = b.tokenizer();
        let ids = tok.encode("i feel so happy today");
        assert_eq!(ids.len(), 5);
        assert_eq!(tok.decode(&ids), "i feel so happy today");
        assert!(tok.encode("").is_empty());
        assert_eq!(tok.encode("qwertyuiop"), vec![TokenId::UNKNOWN]);
    }

    #[test]
    fn bias_suppresses_most_frequent_token() {
        let b = backend();
        let count = |resp: &CompletionResponse, id: TokenId| {
            resp.texts
                .iter()
                .flat_map(|t| b.tokenizer().encode(t))
                .filter(|t| *t == id)
                .count()
        };
        let mut req = CompletionRequest::new(prompt("fear"));
        req.n_completions = 1000;
        req.params.rng_seed = 3;
        let plain = b.complete(&req).unwrap();

        let mut freq: BTreeMap<TokenId, usize> = BTreeMap::new();
        for t in plain.texts.iter().flat_map(|t| b.tokenizer().encode(t)) {
            *freq.entry(t).or_default() += 1;
        }
        let (top, _) = freq.iter().max_by_key(|(id, c)| (**c, std::cmp::Reverse(**id))).unwrap();

        let mut bias = BiasMap::new();
        bias.insert(*top, -7.5).unwrap();
        req.logit_bias = bias;
        let biased = b.complete(&req).unwrap();
        assert!(count(&biased, *top) < count(&plain, *top));
    }
}
