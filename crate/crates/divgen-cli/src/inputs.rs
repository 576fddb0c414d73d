//! Loading embedders, oracles and annotation files from flags.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use divgen::embedding::{Distance, Embedder, HashedNgramEmbedder, RemoteEmbedder};
use divgen::metrics::Evaluator;
use divgen::pipeline::{read_labeled_jsonl, Dataset, TaskSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::{DistanceKind, EmbedderArgs, EmbedderKind, OracleArgs};

pub fn embedder(args: &EmbedderArgs) -> Arc<dyn Embedder> {
    match args.embedder {
        EmbedderKind::Hashed => Arc::new(HashedNgramEmbedder::new(args.embed_seed)),
        EmbedderKind::Remote => {
            let config = divgen::backend::OpenAiConfig::from_env(&args.embed_model);
            Arc::new(RemoteEmbedder::new(
                &config.base_url,
                config.api_key,
                &args.embed_model,
                args.embed_dim,
            ))
        }
    }
}

pub fn distance(kind: DistanceKind) -> Distance {
    match kind {
        DistanceKind::Cosine => Distance::Cosine,
        DistanceKind::Euclidean => Distance::Euclidean,
    }
}

pub fn dataset(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn task(path: &Path) -> Result<TaskSpec> {
    TaskSpec::load(path).with_context(|| format!("loading task {}", path.display()))
}

/// Labels looked up by exact text.
pub struct LabelTable {
    labels: Vec<String>,
    by_text: HashMap<String, String>,
}

impl Evaluator for LabelTable {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, text: &str) -> divgen::Result<String> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| divgen::Error::Malformed(format!("no oracle label for `{text}`")))
    }
}

/// The oracle named by the flags, if any.
pub fn oracle(args: &OracleArgs, labels: &[String]) -> Result<Option<Box<dyn Evaluator>>> {
    if let Some(path) = &args.task {
        let task = task(path)?;
        let Some(mock) = &task.mock else {
            bail!("task {} has no [mock] section to act as oracle", path.display());
        };
        return Ok(Some(Box::new(mock.load_task(&task.labels)?)));
    }
    if let Some(path) = &args.oracle_labels {
        let rows = read_labeled_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
        let mut by_text = HashMap::new();
        for row in rows {
            if !labels.contains(&row.label) {
                bail!("oracle label `{}` is not a dataset label", row.label);
            }
            by_text.insert(row.text, row.label);
        }
        return Ok(Some(Box::new(LabelTable {
            labels: labels.to_vec(),
            by_text,
        })));
    }
    Ok(None)
}

pub fn require_oracle(args: &OracleArgs, labels: &[String]) -> Result<Box<dyn Evaluator>> {
    oracle(args, labels)?.context("an oracle is required: pass --task or --oracle-labels")
}

/// Every non-empty line parsed as `T`.
pub fn json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

#[derive(Deserialize)]
struct TextOnly {
    text: Option<String>,
}

/// The `text` field of every line that has one, so both labeled files and
/// dataset files work as references.
pub fn reference_texts(path: &Path) -> Result<Vec<String>> {
    Ok(json_lines::<TextOnly>(path)?.into_iter().filter_map(|r| r.text).collect())
}

#[derive(Deserialize)]
pub struct OosAnnotation {
    pub text: String,
    pub out_of_scope: bool,
}

pub fn oos_annotations(path: &Path) -> Result<Vec<(String, bool)>> {
    Ok(json_lines::<OosAnnotation>(path)?
        .into_iter()
        .map(|a| (a.text, a.out_of_scope))
        .collect())
}

#[derive(Deserialize)]
pub struct IdLabel {
    pub id: String,
    pub label: String,
}
