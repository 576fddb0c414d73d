//! Probability transforms applied to a next-token distribution.
//!
//! Everything here is a pure function over immutable inputs. The generation
//! loop composes them in a fixed order:
//!
//! ```text
//! temperature -> logit bias (+ frequency penalty) -> top-p -> sample
//! ```
//!
//! The only mutable piece is [`FrequencyLedger`], which the generation loop
//! owns and updates after every batch of completions.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that a distribution sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Index into a backend's vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    /// Reserved id for text the tokenizer cannot map. Never biased.
    pub const UNKNOWN: TokenId = TokenId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A probability vector aligned to a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates that `probs` is non-negative, finite and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(
                "entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if sum == 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token.index()).copied().unwrap_or(0.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Multiplies each entry by `exp(offset(token))` and renormalizes.
    fn reweight_log(&self, offset: impl Fn(TokenId) -> f64) -> TokenDistribution {
        let weights: Vec<f64> = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if *p == 0.0 {
                    0.0
                } else {
                    p * offset(TokenId(i as u32)).exp()
                }
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        TokenDistribution {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        }
    }
}

/// Sampler settings for one completion request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            frequency_penalty: 0.02,
            max_tokens: 100,
            rng_seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidTopP(self.top_p));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Cumulative counts of generated tokens across a whole run.
///
/// Prompt tokens are never recorded here; only completion text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyLedger {
    counts: BTreeMap<TokenId, u64>,
    total: u64,
}

impl FrequencyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, tokens: &[TokenId]) {
        for token in tokens {
            *self.counts.entry(*token).or_insert(0) += 1;
        }
        self.total += tokens.len() as u64;
    }

    /// Consuming form of [`record`](Self::record).
    pub fn updated(mut self, tokens: &[TokenId]) -> Self {
        self.record(tokens);
        self
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.counts.iter().map(|(t, c)| (*t, *c))
    }
}

/// Additive log-probability offsets keyed by token.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BiasMap {
    entries: BTreeMap<TokenId, f64>,
}

impl BiasMap {
    /// Upper bound on entries accepted by OpenAI-style completion endpoints.
    pub const MAX_ENTRIES: usize = 100;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: TokenId, weight: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::OutOfRange(format!("bias weight {weight}")));
        }
        if token == TokenId::UNKNOWN {
            return Err(Error::OutOfRange("cannot bias the unknown token".into()));
        }
        if !self.entries.contains_key(&token) && self.entries.len() >= Self::MAX_ENTRIES {
            return Err(Error::OutOfRange(format!(
                "bias map holds at most {} entries",
                Self::MAX_ENTRIES
            )));
        }
        self.entries.insert(token, weight);
        Ok(())
    }

    pub fn weight(&self, token: TokenId) -> f64 {
        self.entries.get(&token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entries.iter().map(|(t, w)| (*t, *w))
    }

    /// The `logit_bias` object of a completions request: token id as a
    /// decimal string mapped to its weight.
    pub fn to_api_map(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|(t, w)| (t.0.to_string(), *w))
            .collect()
    }
}

/// Turns token frequencies into suppression weights.
///
/// The `max_entries` most frequent tokens each get
/// `max(floor, scale * percent)` where `percent` is the token's share of all
/// generated tokens, times 100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppressionRule {
    pub max_entries: usize,
    pub scale: f64,
    pub floor: f64,
}

impl Default for SuppressionRule {
    fn default() -> Self {
        Self {
            max_entries: BiasMap::MAX_ENTRIES,
            scale: -7.5,
            floor: -7.5,
        }
    }
}

impl SuppressionRule {
    pub fn bias_for(&self, ledger: &FrequencyLedger) -> BiasMap {
        let mut bias = BiasMap::new();
        if ledger.total() == 0 {
            return bias;
        }
        let mut ranked: Vec<(TokenId, u64)> = ledger
            .iter()
            .filter(|(t, c)| *t != TokenId::UNKNOWN && *c > 0)
            .collect();
        // most frequent first, lower id wins ties
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let total = ledger.total() as f64;
        for (token, count) in ranked
            .into_iter()
            .take(self.max_entries.min(BiasMap::MAX_ENTRIES))
        {
            let percent = 100.0 * count as f64 / total;
            let weight = (self.scale * percent).max(self.floor);
            bias.insert(token, weight)
                .expect("bounded by MAX_ENTRIES and finite");
        }
        bias
    }
}

/// Suppression bias with the default rule: top 100 tokens, `-7.5` per
/// percent, floored at `-7.5`.
pub fn compute_suppression_bias(ledger: &FrequencyLedger) -> BiasMap {
    SuppressionRule::default().bias_for(ledger)
}

/// `p_i^(1/T) / sum_j p_j^(1/T)`, evaluated in log space.
pub fn apply_temperature(dist: &TokenDistribution, temperature: f64) -> Result<TokenDistribution> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let inv = 1.0 / temperature;
    let max_log = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p.ln() * inv)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_log == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution);
    }
    let weights: Vec<f64> = dist
        .probs
        .iter()
        .map(|p| {
            if *p > 0.0 {
                (p.ln() * inv - max_log).exp()
            } else {
                0.0
            }
        })
        .collect();
    TokenDistribution::from_weights(weights)
}

/// Adds `bias` in log-probability space and renormalizes.
pub fn apply_bias(dist: &TokenDistribution, bias: &BiasMap) -> TokenDistribution {
    if bias.is_empty() {
        return dist.clone();
    }
    dist.reweight_log(|t| bias.weight(t))
}

/// Per-sequence frequency penalty: each token's log-probability drops by
/// `penalty * count` where `count` is its occurrences in the completion so far.
pub fn apply_frequency_penalty(
    dist: &TokenDistribution,
    sequence_counts: &BTreeMap<TokenId, u32>,
    penalty: f64,
) -> TokenDistribution {
    if penalty == 0.0 || sequence_counts.is_empty() {
        return dist.clone();
    }
    dist.reweight_log(|t| -penalty * f64::from(sequence_counts.get(&t).copied().unwrap_or(0)))
}

/// Nucleus truncation: keeps the smallest descending-probability prefix whose
/// mass reaches `top_p`.
pub fn apply_top_p(dist: &TokenDistribution, top_p: f64) -> Result<TokenDistribution> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::InvalidTopP(top_p));
    }
    if top_p >= 1.0 {
        return Ok(dist.clone());
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    let mut keep = vec![false; dist.len()];
    let mut mass = 0.0;
    for i in order {
        keep[i] = true;
        mass += dist.probs[i];
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    let weights = dist
        .probs
        .iter()
        .zip(keep)
        .map(|(p, k)| if k { *p } else { 0.0 })
        .collect();
    TokenDistribution::from_weights(weights)
}

/// Draws one token by inverse-CDF sampling.
pub fn sample_token<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_nonzero = i;
            if u < acc {
                return TokenId(i as u32);
            }
        }
    }
    TokenId(last_nonzero as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn temperature_examples() {
        let out = apply_temperature(&dist(&[0.5, 0.5]), 1.3).unwrap();
        assert_close(out.probs(), &[0.5, 0.5], 1e-12);

        let d = dist(&[0.1, 0.2, 0.3, 0.4]);
        let out = apply_temperature(&d, 1.0).unwrap();
        assert_close(out.probs(), d.probs(), 1e-12);

        let out = apply_temperature(&dist(&[0.8, 0.2]), 2.0).unwrap();
        assert_close(out.probs(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12);
    }

    #[test]
    fn temperature_rejects_bad_input() {
        let d = dist(&[0.5, 0.5]);
        assert!(matches!(
            apply_temperature(&d, 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(apply_temperature(&d, -1.0).is_err());
        assert!(matches!(
            TokenDistribution::new(vec![0.0, 0.0]),
            Err(Error::DegenerateDistribution)
        ));
    }

    #[test]
    fn temperature_keeps_zero_entries_zero() {
        let out = apply_temperature(&dist(&[0.0, 0.25, 0.75]), 0.3).unwrap();
        assert_eq!(out.probs()[0], 0.0);
    }

    #[test]
    fn suppression_examples() {
        // 1 of 200 tokens = 0.5%
        let mut ledger = FrequencyLedger::new();
        ledger.record(&[TokenId(7)]);
        ledger.record(&vec![TokenId(1); 199]);
        let bias = compute_suppression_bias(&ledger);
        assert!((bias.weight(TokenId(7)) - (-3.75)).abs() < 1e-12);

        // 2 of 100 tokens = 2% -> -15, floored
        let mut ledger = FrequencyLedger::new();
        ledger.record(&[TokenId(3), TokenId(3)]);
        for i in 0..98 {
            ledger.record(&[TokenId(100 + i)]);
        }
        let bias = compute_suppression_bias(&ledger);
        assert_eq!(bias.weight(TokenId(3)), -7.5);

        assert!(compute_suppression_bias(&FrequencyLedger::new()).is_empty());
    }

    #[test]
    fn suppression_keeps_top_100_with_id_tiebreak() {
        let mut ledger = FrequencyLedger::new();
        for i in 0..150u32 {
            ledger.record(&[TokenId(i)]);
        }
        ledger.record(&[TokenId(149)]);
        let bias = compute_suppression_bias(&ledger);
        assert_eq!(bias.len(), 100);
        assert!(bias.weight(TokenId(149)) < 0.0);
        assert!(bias.weight(TokenId(0)) < 0.0);
        assert!(bias.weight(TokenId(98)) < 0.0);
        assert_eq!(bias.weight(TokenId(99)), 0.0);
    }

    #[test]
    fn suppression_skips_unknown_token() {
        let ledger = FrequencyLedger::new().updated(&[TokenId::UNKNOWN, TokenId(1)]);
        let bias = compute_suppression_bias(&ledger);
        assert_eq!(bias.len(), 1);
        assert_eq!(bias.weight(TokenId(1)), -7.5);
    }

    #[test]
    fn bias_examples() {
        let mut bias = BiasMap::new();
        bias.insert(TokenId(0), -7.5).unwrap();
        let out = apply_bias(&dist(&[0.5, 0.5]), &bias);
        let e = (-7.5f64).exp();
        assert_close(out.probs(), &[e / (e + 1.0), 1.0 / (e + 1.0)], 1e-12);
        assert!((out.probs()[0] - 0.000553).abs() < 1e-6);

        let d = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(apply_bias(&d, &BiasMap::new()), d);

        let mut all = BiasMap::new();
        for i in 0..3 {
            all.insert(TokenId(i), -2.0).unwrap();
        }
        assert_close(apply_bias(&d, &all).probs(), d.probs(), 1e-12);
    }

    #[test]
    fn bias_map_caps_entries() {
        let mut bias = BiasMap::new();
        for i in 0..100 {
            bias.insert(TokenId(i), -1.0).unwrap();
        }
        assert!(bias.insert(TokenId(100), -1.0).is_err());
        // overwrite is fine
        bias.insert(TokenId(5), -2.0).unwrap();
        assert!(bias.insert(TokenId::UNKNOWN, -1.0).is_err());
    }

    #[test]
    fn top_p_examples() {
        let d = dist(&[0.7, 0.2, 0.1]);
        assert_eq!(apply_top_p(&d, 1.0).unwrap(), d);
        assert_close(apply_top_p(&d, 0.7).unwrap().probs(), &[1.0, 0.0, 0.0], 1e-12);
        assert_close(
            apply_top_p(&d, 0.8).unwrap().probs(),
            &[0.7 / 0.9, 0.2 / 0.9, 0.0],
            1e-12,
        );
        assert!(matches!(apply_top_p(&d, 0.0), Err(Error::InvalidTopP(_))));
        assert!(apply_top_p(&d, 1.5).is_err());
    }

    #[test]
    fn frequency_penalty_lowers_repeated_tokens() {
        let d = dist(&[0.5, 0.5]);
        let mut seen = BTreeMap::new();
        seen.insert(TokenId(0), 3);
        let out = apply_frequency_penalty(&d, &seen, 0.02);
        let w = (-0.06f64).exp();
        assert_close(out.probs(), &[w / (w + 1.0), 1.0 / (w + 1.0)], 1e-12);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(sample_token(&dist(&[1.0, 0.0]), &mut rng), TokenId(0));
        }

        let d = dist(&[0.5, 0.5]);
        let a = sample_token(&d, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_token(&d, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);

        let d = dist(&[0.3, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let zeros = (0..draws)
            .filter(|_| sample_token(&d, &mut rng) == TokenId(0))
            .count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.3).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn ledger_examples() {
        let (a, b) = (TokenId(1), TokenId(2));
        let ledger = FrequencyLedger::new().updated(&[a, a, b]);
        assert_eq!(ledger.count(a), 2);
        assert_eq!(ledger.count(b), 1);
        assert_eq!(ledger.total(), 3);

        assert_eq!(ledger.clone().updated(&[]), ledger);

        let twice = FrequencyLedger::new().updated(&[a]).updated(&[a]);
        assert_eq!(twice, FrequencyLedger::new().updated(&[a, a]));
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::default().validate().is_ok());
        let p = SamplingParams {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let d = SamplingParams::default();
        assert_eq!((d.max_tokens, d.top_p, d.frequency_penalty), (100, 1.0, 0.02));
    }
}
