//! Generated datasets and their JSON-lines file format.
//!
//! A dataset file starts with one `{"run_metadata": {...}}` header line,
//! followed by one [`DataInstance`] object per line.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::TokenUsage;
use crate::error::{Error, Result};
use crate::pipeline::task::{Diversification, LabeledText, PromptTemplate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OosState {
    #[default]
    Unknown,
    InScope,
    OutOfScope,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Generated,
    Seed,
}

/// Who decided an instance's current label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Specified,
    Oracle,
    Proxy,
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInstance {
    pub id: String,
    pub text: String,
    pub specified_label: String,
    pub current_label: String,
    #[serde(default)]
    pub oos_state: OosState,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub iteration: u64,
    #[serde(default)]
    pub label_provenance: Provenance,
}

impl DataInstance {
    pub fn generated(id: String, text: String, label: &str, iteration: u64) -> Self {
        Self {
            id,
            text,
            specified_label: label.to_string(),
            current_label: label.to_string(),
            oos_state: OosState::Unknown,
            source: Source::Generated,
            iteration,
            label_provenance: Provenance::Specified,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub task: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend_id: String,
    #[serde(default)]
    pub diversification: Diversification,
    #[serde(default)]
    pub prompt_template: PromptTemplate,
    #[serde(default)]
    pub target_count: usize,
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub iterations: u64,
    #[serde(default)]
    pub dropped_completions: u64,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    run_metadata: RunMetadata,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub metadata: RunMetadata,
    pub instances: Vec<DataInstance>,
}

impl Dataset {
    pub fn new(metadata: RunMetadata) -> Self {
        Self {
            metadata,
            instances: Vec::new(),
        }
    }

    /// A dataset of already-labeled texts, e.g. a reference or test set.
    pub fn from_labeled(name: &str, labels: Vec<String>, rows: &[LabeledText]) -> Result<Self> {
        let metadata = RunMetadata {
            task: name.to_string(),
            labels,
            complete: true,
            ..Default::default()
        };
        let mut ds = Self::new(metadata);
        for (i, row) in rows.iter().enumerate() {
            let mut inst = DataInstance::generated(format!("r{i:06}"), row.text.clone(), &row.label, 0);
            inst.source = Source::Seed;
            ds.instances.push(inst);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn labels(&self) -> &[String] {
        &self.metadata.labels
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.instances.iter().map(|i| i.text.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&DataInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.metadata.labels.iter().position(|l| l == label)
    }

    /// Generated instances per specified label, in label order.
    pub fn specified_counts(&self) -> IndexMap<String, usize> {
        self.count_by(|i| &i.specified_label, |i| i.source == Source::Generated)
    }

    /// All instances per current label, in label order.
    pub fn current_counts(&self) -> IndexMap<String, usize> {
        self.count_by(|i| &i.current_label, |_| true)
    }

    fn count_by(
        &self,
        key: impl Fn(&DataInstance) -> &String,
        keep: impl Fn(&DataInstance) -> bool,
    ) -> IndexMap<String, usize> {
        let mut counts: IndexMap<String, usize> =
            self.metadata.labels.iter().map(|l| (l.clone(), 0)).collect();
        for inst in self.instances.iter().filter(|i| keep(i)) {
            if let Some(c) = counts.get_mut(key(inst)) {
                *c += 1;
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let labels: HashSet<&String> = self.metadata.labels.iter().collect();
        for inst in &self.instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Malformed(format!("duplicate instance id `{}`", inst.id)));
            }
            if !labels.contains(&inst.current_label) {
                return Err(Error::UnknownLabel(inst.current_label.clone()));
            }
            if !labels.contains(&inst.specified_label) {
                return Err(Error::UnknownLabel(inst.specified_label.clone()));
            }
            if inst.source == Source::Seed && inst.iteration != 0 {
                return Err(Error::Malformed(format!("seed instance `{}` has iteration {}", inst.id, inst.iteration)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            run_metadata: self.metadata.clone(),
        })?;
        out.push('\n');
        for inst in &self.instances {
            out.push_str(&serde_json::to_string(inst)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("dataset file is empty".into()))?;
        let header: Header = serde_json::from_str(header)
            .map_err(|e| Error::Malformed(format!("dataset header: {e}")))?;
        let instances = lines
            .enumerate()
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Malformed(format!("instance line {}: {e}", n + 2)))
            })
            .collect::<Result<Vec<DataInstance>>>()?;
        let ds = Self {
            metadata: header.run_metadata,
            instances,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes atomically: a sibling temp file renamed over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let body = self.to_jsonl()?;
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Reads `{"text": ..., "label": ...}` lines.
pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<LabeledText>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_labeled_jsonl(path: &Path, rows: &[LabeledText]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
