use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mock_lm::{LabelConditionedLm, NGramModel, SyntheticTask};
use crate::sampling::SamplingParams;

/// Instruction template used to ask for one instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTemplate {
    /// `Write a {type} to cover all following elements` / `Elements: {label}`
    #[default]
    A,
    /// `Show me a {type} that has the following characteristics` /
    /// `Characteristics: {label}`
    C,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

impl LabeledText {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diversification {
    pub logit_suppression: bool,
    pub temperature: f64,
}

impl Default for Diversification {
    fn default() -> Self {
        Self {
            logit_suppression: false,
            temperature: 1.0,
        }
    }
}

/// Sampler settings shared by every request of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSettings {
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub max_tokens: usize,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        let p = SamplingParams::default();
        Self {
            top_p: p.top_p,
            frequency_penalty: p.frequency_penalty,
            max_tokens: p.max_tokens,
        }
    }
}

/// Definition of the offline keyword task the mock backend samples from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockTaskConfig {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Directory holding `{label}.txt`, relative to the task file.
    pub corpus_dir: PathBuf,
    pub keywords: IndexMap<String, Vec<String>>,
}

fn default_order() -> usize {
    NGramModel::DEFAULT_ORDER
}

fn default_smoothing() -> f64 {
    1.0
}

fn default_batch_size() -> usize {
    20
}

impl MockTaskConfig {
    /// Keyword sets ordered like `labels`.
    pub fn keyword_sets(&self, labels: &[String]) -> Result<IndexMap<String, BTreeSet<String>>> {
        labels
            .iter()
            .map(|l| {
                let words = self
                    .keywords
                    .get(l)
                    .ok_or_else(|| Error::UnknownLabel(l.clone()))?;
                Ok((l.clone(), words.iter().cloned().collect()))
            })
            .collect()
    }

    pub fn load_task(&self, labels: &[String]) -> Result<SyntheticTask> {
        SyntheticTask::load(self.keyword_sets(labels)?, &self.corpus_dir)
    }

    pub fn fit(&self, labels: &[String]) -> Result<(SyntheticTask, LabelConditionedLm)> {
        let task = self.load_task(labels)?;
        let lm = LabelConditionedLm::fit(task.corpus(), self.order, self.smoothing)?;
        Ok((task, lm))
    }
}

/// Everything needed to generate one dataset. Stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub text_type: String,
    pub labels: Vec<String>,
    pub label_phrases: IndexMap<String, String>,
    #[serde(default)]
    pub prompt_template: PromptTemplate,
    pub target_count: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed_examples: Vec<LabeledText>,
    /// Also emit seed examples as dataset instances (iteration 0).
    #[serde(default)]
    pub include_seeds: bool,
    #[serde(default)]
    pub diversification: Diversification,
    #[serde(default)]
    pub sampling: SamplingSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockTaskConfig>,
}

impl TaskSpec {
    /// Reads a TOML task file; the mock corpus directory is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut task: TaskSpec = toml::from_str(&fs::read_to_string(path)?)?;
        if let Some(mock) = &mut task.mock {
            if mock.corpus_dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                mock.corpus_dir = base.join(&mock.corpus_dir);
            }
        }
        task.validate()?;
        Ok(task)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let task: TaskSpec = toml::from_str(text)?;
        task.validate()?;
        Ok(task)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("task spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidTask(m));
        if self.labels.len() < 2 {
            return invalid("a task needs at least two labels".into());
        }
        let unique: HashSet<&String> = self.labels.iter().collect();
        if unique.len() != self.labels.len() {
            return invalid("labels must be unique".into());
        }
        for label in &self.labels {
            match self.label_phrases.get(label) {
                Some(p) if !p.trim().is_empty() => {}
                _ => return invalid(format!("label `{label}` has no prompt phrase")),
            }
        }
        if self.label_phrases.keys().any(|k| !unique.contains(k)) {
            return invalid("label_phrases names an unknown label".into());
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive".into());
        }
        if self.target_count < self.batch_size {
            return invalid(format!(
                "target_count {} is below batch_size {}",
                self.target_count, self.batch_size
            ));
        }
        if let Some(bad) = self.seed_examples.iter().find(|e| !unique.contains(&e.label)) {
            return Err(Error::UnknownLabel(bad.label.clone()));
        }
        if self.diversification.temperature.is_nan() || self.diversification.temperature <= 0.0 {
            return Err(Error::NonPositiveTemperature(self.diversification.temperature));
        }
        if let Some(mock) = &self.mock {
            if mock.keywords.len() != self.labels.len()
                || self.labels.iter().any(|l| !mock.keywords.contains_key(l))
            {
                return invalid("mock keywords must cover exactly the task labels".into());
            }
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn phrase(&self, label: &str) -> Result<&str> {
        self.label_phrases
            .get(label)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Phrase/label pairs for [`MockBackend`](crate::backend::MockBackend).
    pub fn phrase_pairs(&self) -> Vec<(String, String)> {
        self.labels
            .iter()
            .map(|l| (self.label_phrases[l].clone(), l.clone()))
            .collect()
    }

    /// Default seed-pool size: 18, or 15 for five-class tasks.
    pub fn default_seed_count(&self) -> usize {
        if self.labels.len() == 5 {
            15
        } else {
            18
        }
    }
}
