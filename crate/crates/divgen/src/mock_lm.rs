//! A small label-conditioned n-gram language model.
//!
//! This is the offline stand-in for a hosted LLM. Each label gets its own
//! add-one smoothed n-gram model over a shared closed vocabulary, so the
//! sampling transforms in [`crate::sampling`] act on real next-token
//! distributions and the whole pipeline runs without a network.
//!
//! Contexts that never occurred in training back off to the longest suffix
//! that did, ending at the unigram distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{TokenDistribution, TokenId};

pub const BOS: TokenId = TokenId(0);
pub const EOS: TokenId = TokenId(1);
const BOS_TEXT: &str = "<s>";
const EOS_TEXT: &str = "</s>";

/// Closed whitespace vocabulary. Ids 0 and 1 are the sentence boundaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from texts, assigning ids in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        vocab.intern(BOS_TEXT);
        vocab.intern(EOS_TEXT);
        for text in texts {
            for word in text.split_whitespace() {
                vocab.intern(word);
            }
        }
        vocab
    }

    fn intern(&mut self, word: &str) -> TokenId {
        if let Some(id) = self.index.get(word) {
            return *id;
        }
        let id = TokenId(self.tokens.len() as u32);
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of tokens a model can emit (everything except `<s>`).
    pub fn output_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    /// Whitespace tokenization; out-of-vocabulary words map to
    /// [`TokenId::UNKNOWN`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(TokenId::UNKNOWN))
            .collect()
    }

    /// Joins word tokens with single spaces, dropping boundary and unknown ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|id| **id != BOS && **id != EOS)
            .filter_map(|id| self.token(*id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, Default)]
struct ContextCounts {
    total: u32,
    next: BTreeMap<TokenId, u32>,
}

/// Add-one smoothed n-gram model with suffix backoff for unseen contexts.
#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    smoothing: f64,
    vocab: Arc<Vocabulary>,
    // keyed by contexts of every length 0..order
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl NGramModel {
    pub const DEFAULT_ORDER: usize = 3;

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Times a context (of any length below `order`) was followed by a token.
    pub fn context_count(&self, context: &[TokenId]) -> u32 {
        self.counts.get(context).map_or(0, |c| c.total)
    }

    /// Unsmoothed maximum-likelihood distribution for the exact (padded)
    /// context, or `None` when the context was never seen.
    pub fn raw_distribution(&self, context: &[TokenId]) -> Option<TokenDistribution> {
        let key = self.padded_context(context);
        let counts = self.counts.get(&key)?;
        let mut weights = vec![0.0; self.vocab.len()];
        for (token, c) in &counts.next {
            weights[token.index()] = f64::from(*c);
        }
        TokenDistribution::from_weights(weights).ok()
    }

    /// Smoothed next-token distribution. `<s>` always has probability zero.
    pub fn next_distribution(&self, context: &[TokenId]) -> TokenDistribution {
        let key = self.padded_context(context);
        let counts = (0..=key.len())
            .map(|skip| &key[skip..])
            .find_map(|suffix| self.counts.get(suffix).filter(|c| c.total > 0))
            .expect("fitted model has unigram counts");
        let denom = f64::from(counts.total) + self.smoothing * self.vocab.output_size() as f64;
        let mut probs = vec![self.smoothing / denom; self.vocab.len()];
        probs[BOS.index()] = 0.0;
        for (token, c) in &counts.next {
            probs[token.index()] = (f64::from(*c) + self.smoothing) / denom;
        }
        TokenDistribution::from_weights(probs).expect("positive smoothing mass")
    }

    fn padded_context(&self, context: &[TokenId]) -> Vec<TokenId> {
        let want = self.order - 1;
        let tail = &context[context.len().saturating_sub(want)..];
        let mut key = vec![BOS; want - tail.len()];
        key.extend_from_slice(tail);
        key
    }
}

/// Fits an add-one n-gram model with a vocabulary built from `texts`.
pub fn fit_corpus<S: AsRef<str>>(texts: &[S], order: usize) -> Result<NGramModel> {
    let vocab = Arc::new(Vocabulary::from_texts(texts.iter().map(|t| t.as_ref())));
    fit_with_vocabulary(texts, order, vocab, 1.0)
}

/// Fits against a shared vocabulary. Words outside it are rejected.
pub fn fit_with_vocabulary<S: AsRef<str>>(
    texts: &[S],
    order: usize,
    vocab: Arc<Vocabulary>,
    smoothing: f64,
) -> Result<NGramModel> {
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if order == 0 {
        return Err(Error::OutOfRange("n-gram order must be at least 1".into()));
    }
    if smoothing.is_nan() || smoothing <= 0.0 {
        return Err(Error::OutOfRange(format!("smoothing constant {smoothing}")));
    }
    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for text in texts {
        let ids = vocab.encode(text.as_ref());
        if let Some(pos) = ids.iter().position(|t| *t == TokenId::UNKNOWN) {
            let word = text.as_ref().split_whitespace().nth(pos).unwrap_or("");
            return Err(Error::Malformed(format!("word `{word}` not in vocabulary")));
        }
        let mut seq = vec![BOS; order - 1];
        seq.extend(ids);
        seq.push(EOS);
        for i in (order - 1)..seq.len() {
            let target = seq[i];
            for len in 0..order {
                let entry = counts.entry(seq[i - len..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(target).or_insert(0) += 1;
            }
        }
    }
    Ok(NGramModel {
        order,
        smoothing,
        vocab,
        counts,
    })
}

/// One n-gram model per label over a shared vocabulary.
#[derive(Clone, Debug)]
pub struct LabelConditionedLm {
    vocab: Arc<Vocabulary>,
    models: IndexMap<String, NGramModel>,
}

impl LabelConditionedLm {
    pub fn fit(
        corpora: &IndexMap<String, Vec<String>>,
        order: usize,
        smoothing: f64,
    ) -> Result<Self> {
        let vocab = Arc::new(Vocabulary::from_texts(
            corpora.values().flatten().map(String::as_str),
        ));
        let mut models = IndexMap::new();
        for (label, texts) in corpora {
            let model = fit_with_vocabulary(texts, order, vocab.clone(), smoothing)?;
            models.insert(label.clone(), model);
        }
        Ok(Self { vocab, models })
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn model(&self, label: &str) -> Result<&NGramModel> {
        self.models
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn next_distribution(&self, context: &[TokenId], label: &str) -> Result<TokenDistribution> {
        Ok(self.model(label)?.next_distribution(context))
    }
}

/// What the keyword oracle says about a text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVerdict {
    Label(String),
    OutOfScope,
}

/// A labeled toy domain where each label owns a disjoint set of keywords.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    labels: Vec<String>,
    keywords: IndexMap<String, BTreeSet<String>>,
    corpus: IndexMap<String, Vec<String>>,
}

impl SyntheticTask {
    pub fn new(
        keywords: IndexMap<String, BTreeSet<String>>,
        corpus: IndexMap<String, Vec<String>>,
    ) -> Result<Self> {
        let labels: Vec<String> = keywords.keys().cloned().collect();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (label, words) in &keywords {
            if words.is_empty() {
                return Err(Error::InvalidTask(format!("label `{label}` has no keywords")));
            }
            for w in words {
                if let Some(prev) = owner.insert(w.as_str(), label.as_str()) {
                    return Err(Error::InvalidTask(format!(
                        "keyword `{w}` shared by `{prev}` and `{label}`"
                    )));
                }
            }
        }
        for label in corpus.keys() {
            if !keywords.contains_key(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        let task = Self {
            labels,
            keywords,
            corpus,
        };
        for (label, texts) in &task.corpus {
            if let Some(bad) = texts
                .iter()
                .find(|t| task.keyword_oracle(t) != OracleVerdict::Label(label.clone()))
            {
                return Err(Error::InvalidTask(format!(
                    "corpus text for `{label}` is not keyword-consistent: {bad}"
                )));
            }
        }
        Ok(task)
    }

    /// Loads `{dir}/{label}.txt`, one document per line, for every label.
    pub fn load(keywords: IndexMap<String, BTreeSet<String>>, dir: &Path) -> Result<Self> {
        let mut corpus = IndexMap::new();
        for label in keywords.keys() {
            let raw = fs::read_to_string(dir.join(format!("{label}.txt")))?;
            let lines: Vec<String> = raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            corpus.insert(label.clone(), lines);
        }
        Self::new(keywords, corpus)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn keywords(&self) -> &IndexMap<String, BTreeSet<String>> {
        &self.keywords
    }

    pub fn corpus(&self) -> &IndexMap<String, Vec<String>> {
        &self.corpus
    }

    /// Per-label keyword hit counts, in label order.
    pub fn keyword_hits(&self, text: &str) -> Vec<usize> {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .collect();
        self.keywords
            .values()
            .map(|set| words.iter().filter(|w| set.contains(w.as_str())).count())
            .collect()
    }

    /// The single label whose keywords occur in `text`; out of scope when
    /// none or several labels match.
    pub fn keyword_oracle(&self, text: &str) -> OracleVerdict {
        let hits = self.keyword_hits(text);
        let mut matched = hits.iter().enumerate().filter(|(_, h)| **h > 0);
        match (matched.next(), matched.next()) {
            (Some((i, _)), None) => OracleVerdict::Label(self.labels[i].clone()),
            _ => OracleVerdict::OutOfScope,
        }
    }

    /// Writes `{dir}/{label}.txt` for every label.
    pub fn write_corpus(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (label, texts) in &self.corpus {
            let mut body = texts.join("\n");
            body.push('\n');
            fs::write(dir.join(format!("{label}.txt")), body)?;
        }
        Ok(())
    }
}

const DEMO_KEYWORDS: [(&str, [&str; 6]); 4] = [
    ("joy", ["happy", "delighted", "glad", "cheerful", "thrilled", "overjoyed"]),
    ("anger", ["furious", "angry", "outraged", "annoyed", "irritated", "livid"]),
    ("fear", ["scared", "afraid", "terrified", "nervous", "anxious", "frightened"]),
    ("sadness", ["sad", "unhappy", "gloomy", "heartbroken", "miserable", "lonely"]),
];

const SUBJECTS: [&str; 6] = ["i", "my friend", "my sister", "everyone here", "the whole team", "my mom"];
const FEEL: [&str; 4] = ["feel", "felt", "am", "was"];
const INTENSIFIERS: [&str; 5] = ["so", "really", "very", "totally", "kind of"];
const TOPICS: [&str; 10] = [
    "the game",
    "the news",
    "my job",
    "this weekend",
    "the movie",
    "the trip",
    "the results",
    "the weather",
    "the concert",
    "school",
];
const TIMES: [&str; 5] = ["today", "tonight", "right now", "again", "this morning"];

fn demo_sentence(keyword: &str, rng: &mut ChaCha8Rng) -> String {
    let pick = |items: &[&'static str], rng: &mut ChaCha8Rng| *items.choose(rng).unwrap();
    let template = rng.random_range(0..5);
    match template {
        0 => format!(
            "{} {} {} {} about {} {}",
            pick(&SUBJECTS, rng),
            pick(&FEEL, rng),
            pick(&INTENSIFIERS, rng),
            keyword,
            pick(&TOPICS, rng),
            pick(&TIMES, rng)
        ),
        1 => format!(
            "{} made me {} {} {}",
            pick(&TOPICS, rng),
            pick(&INTENSIFIERS, rng),
            keyword,
            pick(&TIMES, rng)
        ),
        2 => format!("{} i am {} because of {}", pick(&TIMES, rng), keyword, pick(&TOPICS, rng)),
        3 => format!(
            "honestly {} {} {} after {}",
            pick(&SUBJECTS, rng),
            pick(&FEEL, rng),
            keyword,
            pick(&TOPICS, rng)
        ),
        _ => format!("{} has me {} {}", pick(&TOPICS, rng), pick(&INTENSIFIERS, rng), keyword),
    }
}

fn demo_texts(per_label: usize, seed: u64) -> IndexMap<String, Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DEMO_KEYWORDS
        .iter()
        .map(|(label, words)| {
            let texts = (0..per_label)
                .map(|_| demo_sentence(words.choose(&mut rng).unwrap(), &mut rng))
                .collect();
            (label.to_string(), texts)
        })
        .collect()
}

/// Keyword sets of the bundled four-label emotion task.
pub fn demo_keywords() -> IndexMap<String, BTreeSet<String>> {
    DEMO_KEYWORDS
        .iter()
        .map(|(label, words)| {
            (
                label.to_string(),
                words.iter().map(|w| w.to_string()).collect(),
            )
        })
        .collect()
}

/// The bundled four-label emotion task (joy, anger, fear, sadness).
pub fn demo_task() -> SyntheticTask {
    SyntheticTask::new(demo_keywords(), demo_texts(1500, 20_230_501))
        .expect("demo corpus is keyword-consistent")
}

/// Held-out labeled texts drawn from the same templates as [`demo_task`].
pub fn demo_test_set(per_label: usize, seed: u64) -> Vec<(String, String)> {
    demo_texts(per_label, seed)
        .into_iter()
        .flat_map(|(label, texts)| texts.into_iter().map(move |t| (t, label.clone())))
        .collect()
}
