//! Out-of-scope filtering.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::svm::{sgd_train, LinearBinaryClassifier, SgdConfig};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::pipeline::Dataset;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary in-scope / out-of-scope classifier. The positive class is
/// out of scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OosModel {
    pub classifier: LinearBinaryClassifier,
    pub threshold: f64,
    pub embedder: String,
}

impl OosModel {
    pub fn is_out_of_scope(&self, x: &[f64]) -> bool {
        self.classifier.confidence(x) > self.threshold
    }
}

/// Trains on `(text, out_of_scope)` annotations.
pub fn train_oos_model(
    annotations: &[(String, bool)],
    embedder: &dyn Embedder,
    threshold: f64,
    config: &SgdConfig,
) -> Result<OosModel> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::OutOfRange(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let texts: Vec<&str> = annotations.iter().map(|(t, _)| t.as_str()).collect();
    let vectors = embedder.embed(&texts)?;
    let examples: Vec<(Vec<f64>, f64)> = vectors
        .into_iter()
        .zip(annotations)
        .map(|(v, (_, oos))| (v, if *oos { 1.0 } else { -1.0 }))
        .collect();
    Ok(OosModel {
        classifier: sgd_train(&examples, config)?,
        threshold,
        embedder: embedder.id().to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OosSplitReport {
    pub splits: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Repeated stratified 8:2 train/test evaluation of [`train_oos_model`].
pub fn evaluate_oos_splits(
    annotations: &[(String, bool)],
    embedder: &dyn Embedder,
    threshold: f64,
    config: &SgdConfig,
    splits: usize,
    seed: u64,
) -> Result<OosSplitReport> {
    let pos: Vec<usize> = (0..annotations.len()).filter(|&i| annotations[i].1).collect();
    let neg: Vec<usize> = (0..annotations.len()).filter(|&i| !annotations[i].1).collect();
    for class in [&pos, &neg] {
        if class.len() < 2 {
            return Err(Error::TooFew {
                needed: 2,
                got: class.len(),
            });
        }
    }
    let test_size = |n: usize| ((n as f64 * 0.2).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accuracies = Vec::with_capacity(splits);
    for s in 0..splits {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [&pos, &neg] {
            let mut idx = class.clone();
            idx.shuffle(&mut rng);
            let k = test_size(idx.len());
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        let train_rows: Vec<(String, bool)> = train.iter().map(|&i| annotations[i].clone()).collect();
        let cfg = SgdConfig {
            seed: config.seed.wrapping_add(s as u64),
            ..config.clone()
        };
        let model = train_oos_model(&train_rows, embedder, threshold, &cfg)?;
        let texts: Vec<&str> = test.iter().map(|&i| annotations[i].0.as_str()).collect();
        let vectors = embedder.embed(&texts)?;
        let correct = vectors
            .iter()
            .zip(&test)
            .filter(|(v, &i)| model.is_out_of_scope(v) == annotations[i].1)
            .count();
        accuracies.push(correct as f64 / test.len() as f64);
    }
    let n = accuracies.len().max(1) as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(OosSplitReport {
        splits,
        accuracies,
        mean,
        std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OosFilterReport {
    pub n_before: usize,
    pub removed: usize,
    pub ratio: f64,
    pub removed_ids: Vec<String>,
}

/// Drops instances the model calls out of scope. Survivors are unchanged.
pub fn filter_oos(dataset: &Dataset, model: &OosModel, embedder: &dyn Embedder) -> Result<(Dataset, OosFilterReport)> {
    let vectors = embedder.embed(&dataset.texts())?;
    let mut out = Dataset::new(dataset.metadata.clone());
    let mut removed_ids = Vec::new();
    for (inst, v) in dataset.instances.iter().zip(&vectors) {
        if model.is_out_of_scope(v) {
            removed_ids.push(inst.id.clone());
        } else {
            out.instances.push(inst.clone());
        }
    }
    let n_before = dataset.len();
    Ok((
        out,
        OosFilterReport {
            n_before,
            removed: removed_ids.len(),
            ratio: if n_before == 0 { 0.0 } else { removed_ids.len() as f64 / n_before as f64 },
            removed_ids,
        },
    ))
}

/// Uniformly subsamples every dataset down to the smallest one's size,
/// keeping instance order.
pub fn balanced_subsample(datasets: &[Dataset], seed: u64) -> Vec<Dataset> {
    let Some(size) = datasets.iter().map(Dataset::len).min() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    datasets
        .iter()
        .map(|ds| {
            let mut keep = index::sample(&mut rng, ds.len(), size).into_vec();
            keep.sort_unstable();
            let mut out = Dataset::new(ds.metadata.clone());
            out.instances = keep.into_iter().map(|i| ds.instances[i].clone()).collect();
            out
        })
        .collect()
}
