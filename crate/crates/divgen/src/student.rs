//! Linear one-vs-rest student classifier, a lightweight stand-in for
//! fine-tuning a pretrained model on the generated data.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::curation::{train_one_vs_rest, LinearBinaryClassifier, SgdConfig};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::pipeline::{Dataset, LabeledText};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub sgd: SgdConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub labels: Vec<String>,
    pub embedder: String,
    pub classifiers: Vec<LinearBinaryClassifier>,
}

impl StudentModel {
    /// Label with the largest margin; earlier labels win ties.
    pub fn predict_vector(&self, x: &[f64]) -> &str {
        let mut best = 0;
        let mut best_margin = f64::NEG_INFINITY;
        for (k, c) in self.classifiers.iter().enumerate() {
            let m = c.margin(x);
            if m > best_margin {
                best = k;
                best_margin = m;
            }
        }
        &self.labels[best]
    }
}

/// Trains on every instance's current label.
pub fn train_student(dataset: &Dataset, embedder: &dyn Embedder, config: &StudentConfig) -> Result<StudentModel> {
    let labels = dataset.labels().to_vec();
    let classes: Vec<usize> = dataset
        .instances
        .iter()
        .map(|i| {
            dataset
                .label_index(&i.current_label)
                .ok_or_else(|| Error::UnknownLabel(i.current_label.clone()))
        })
        .collect::<Result<_>>()?;
    if classes.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleClass);
    }
    let vectors = embedder.embed(&dataset.texts())?;
    let classifiers = train_one_vs_rest(&vectors, &classes, labels.len(), &config.sgd)?;
    Ok(StudentModel {
        labels,
        embedder: embedder.id().to_string(),
        classifiers,
    })
}

/// Accuracy on a labeled test set.
pub fn evaluate_student(model: &StudentModel, embedder: &dyn Embedder, test: &[LabeledText]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let texts: Vec<&str> = test.iter().map(|t| t.text.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    let correct = vectors
        .iter()
        .zip(test)
        .filter(|(v, t)| model.predict_vector(v) == t.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}
