//! Label replacement, either by querying the oracle for every instance or by
//! inspecting a sample and extending it with per-label proxy classifiers.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::svm::{train_one_vs_rest, LinearBinaryClassifier, SgdConfig};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::metrics::{label_accuracy, Evaluator};
use crate::pipeline::{Dataset, Provenance};

/// Weight of the specified label in the blended score.
pub const DEFAULT_W: f64 = 0.3;

/// Inspection budgets used for proxy-assisted replacement.
pub const INSPECTION_BUDGETS: [usize; 3] = [90, 180, 270];

/// One binary classifier per task label, all over the same embedder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyModelSet {
    pub labels: Vec<String>,
    pub embedder: String,
    pub trained_on: Vec<String>,
    pub classifiers: Vec<LinearBinaryClassifier>,
}

impl ProxyModelSet {
    /// Per-label confidences in label order.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.classifiers.iter().map(|c| c.confidence(x)).collect()
    }

    /// Labels backed by a constant stub rather than a trained classifier.
    pub fn stub_labels(&self) -> Vec<&str> {
        self.labels
            .iter()
            .zip(&self.classifiers)
            .filter(|(_, c)| c.is_constant())
            .map(|(l, _)| l.as_str())
            .collect()
    }
}

/// Trains one proxy per label on the inspected instances only, using the
/// oracle's labels for them.
pub fn train_proxies(
    dataset: &Dataset,
    inspected_ids: &[String],
    oracle_labels: &BTreeMap<String, String>,
    embedder: &dyn Embedder,
    config: &SgdConfig,
) -> Result<ProxyModelSet> {
    if inspected_ids.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let mut texts = Vec::with_capacity(inspected_ids.len());
    let mut classes = Vec::with_capacity(inspected_ids.len());
    for id in inspected_ids {
        let inst = dataset
            .get(id)
            .ok_or_else(|| Error::Malformed(format!("inspected id `{id}` is not in the dataset")))?;
        let label = oracle_labels
            .get(id)
            .ok_or_else(|| Error::Malformed(format!("no oracle label for `{id}`")))?;
        classes.push(dataset.label_index(label).ok_or_else(|| Error::UnknownLabel(label.clone()))?);
        texts.push(inst.text.as_str());
    }
    let vectors = embedder.embed(&texts)?;
    let classifiers = train_one_vs_rest(&vectors, &classes, dataset.labels().len(), config)?;
    Ok(ProxyModelSet {
        labels: dataset.labels().to_vec(),
        embedder: embedder.id().to_string(),
        trained_on: inspected_ids.to_vec(),
        classifiers,
    })
}

/// `s_s·w + s_p·(1−w)`, with `s_s ∈ {0, 1}` and `s_p, w ∈ [0, 1]`.
///
/// ```
/// use divgen::curation::final_score;
///
/// assert!((final_score(1.0, 0.9, 0.3).unwrap() - 0.93).abs() < 1e-12);
/// assert_eq!(final_score(0.0, 0.0, 0.7).unwrap(), 0.0);
/// assert!(final_score(0.5, 0.9, 0.3).is_err());
/// ```
pub fn final_score(s_s: f64, s_p: f64, w: f64) -> Result<f64> {
    if s_s != 0.0 && s_s != 1.0 {
        return Err(Error::OutOfRange(format!("specified indicator must be 0 or 1, got {s_s}")));
    }
    if !(0.0..=1.0).contains(&s_p) {
        return Err(Error::OutOfRange(format!("proxy confidence must be in [0, 1], got {s_p}")));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange(format!("w must be in [0, 1], got {w}")));
    }
    Ok(s_s * w + s_p * (1.0 - w))
}

/// Index of the label with the highest blended score. A tie that includes
/// the specified label keeps it; other ties go to the lowest index.
pub fn choose_label(specified: usize, proxy_scores: &[f64], w: f64) -> Result<usize> {
    let scores = proxy_scores
        .iter()
        .enumerate()
        .map(|(k, s_p)| final_score(if k == specified { 1.0 } else { 0.0 }, *s_p, w))
        .collect::<Result<Vec<f64>>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.get(specified) == Some(&max) {
        return Ok(specified);
    }
    Ok(scores.iter().position(|s| *s == max).expect("non-empty scores"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrMode {
    /// Every instance is relabeled by the oracle.
    OracleAll,
    /// `n` sampled instances are relabeled by the oracle; proxies trained on
    /// them decide the rest.
    Proxy { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplaceOptions {
    pub w: f64,
    pub seed: u64,
    pub sgd: SgdConfig,
}

impl Default for ReplaceOptions {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            seed: 0,
            sgd: SgdConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub mode: String,
    pub n_inspected: usize,
    pub labels_changed: usize,
    pub w: Option<f64>,
    pub label_accuracy_before: Option<f64>,
    pub label_accuracy_after: Option<f64>,
    /// `confusion[current][oracle]` counts after curation.
    pub confusion: Option<IndexMap<String, IndexMap<String, usize>>>,
    pub proxy_stubs: Vec<String>,
    pub oos_removed: Option<usize>,
    pub oos_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

impl CurationReport {
    fn new(mode: &str) -> Self {
        Self {
            mode: mode.to_string(),
            n_inspected: 0,
            labels_changed: 0,
            w: None,
            label_accuracy_before: None,
            label_accuracy_after: None,
            confusion: None,
            proxy_stubs: Vec::new(),
            oos_removed: None,
            oos_ratio: None,
            runtime_ms: None,
        }
    }
}

fn confusion(dataset: &Dataset, oracle: &dyn Evaluator) -> Result<IndexMap<String, IndexMap<String, usize>>> {
    let blank: IndexMap<String, usize> = dataset.labels().iter().map(|l| (l.clone(), 0)).collect();
    let mut m: IndexMap<String, IndexMap<String, usize>> =
        dataset.labels().iter().map(|l| (l.clone(), blank.clone())).collect();
    for inst in &dataset.instances {
        let predicted = oracle.predict(&inst.text)?;
        if let Some(row) = m.get_mut(&inst.current_label) {
            if let Some(c) = row.get_mut(&predicted) {
                *c += 1;
            }
        }
    }
    Ok(m)
}

/// Rewrites `current_label` of a copy of `dataset`. Texts, ids and order are
/// untouched.
pub fn replace_labels(
    dataset: &Dataset,
    mode: LrMode,
    oracle: &dyn Evaluator,
    embedder: &dyn Embedder,
    options: &ReplaceOptions,
) -> Result<(Dataset, CurationReport)> {
    let mut out = dataset.clone();
    let mut report = CurationReport::new(match mode {
        LrMode::OracleAll => "oracle_all",
        LrMode::Proxy { .. } => "proxy",
    });
    report.label_accuracy_before = Some(label_accuracy(dataset, oracle)?);

    match mode {
        LrMode::OracleAll => {
            for inst in &mut out.instances {
                inst.current_label = oracle.predict(&inst.text)?;
                inst.label_provenance = Provenance::Oracle;
            }
            report.n_inspected = out.len();
        }
        LrMode::Proxy { n } => {
            if n > dataset.len() {
                return Err(Error::TooFew {
                    needed: n,
                    got: dataset.len(),
                });
            }
            if !(0.0..=1.0).contains(&options.w) {
                return Err(Error::OutOfRange(format!("w must be in [0, 1], got {}", options.w)));
            }
            report.w = Some(options.w);
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut picked = index::sample(&mut rng, dataset.len(), n).into_vec();
            picked.sort_unstable();
            let inspected: BTreeSet<usize> = picked.iter().copied().collect();

            let mut oracle_labels = BTreeMap::new();
            let mut ids = Vec::with_capacity(n);
            for &i in &picked {
                let inst = &mut out.instances[i];
                let label = oracle.predict(&inst.text)?;
                inst.current_label = label.clone();
                inst.label_provenance = Provenance::Oracle;
                oracle_labels.insert(inst.id.clone(), label);
                ids.push(inst.id.clone());
            }
            report.n_inspected = n;

            if n < dataset.len() {
                let proxies = train_proxies(dataset, &ids, &oracle_labels, embedder, &options.sgd)?;
                report.proxy_stubs = proxies.stub_labels().iter().map(|s| s.to_string()).collect();
                let rest: Vec<usize> = (0..out.len()).filter(|i| !inspected.contains(i)).collect();
                let texts: Vec<&str> = rest.iter().map(|&i| dataset.instances[i].text.as_str()).collect();
                let vectors = embedder.embed(&texts)?;
                for (&i, v) in rest.iter().zip(&vectors) {
                    let inst = &mut out.instances[i];
                    let specified = dataset
                        .label_index(&inst.specified_label)
                        .ok_or_else(|| Error::UnknownLabel(inst.specified_label.clone()))?;
                    let k = choose_label(specified, &proxies.scores(v), options.w)?;
                    inst.current_label = dataset.labels()[k].clone();
                    inst.label_provenance = Provenance::Proxy;
                }
            }
        }
    }

    report.labels_changed = dataset
        .instances
        .iter()
        .zip(&out.instances)
        .filter(|(a, b)| a.current_label != b.current_label)
        .count();
    report.label_accuracy_after = Some(label_accuracy(&out, oracle)?);
    report.confusion = Some(confusion(&out, oracle)?);
    Ok((out, report))
}

/// Two-sided 95% Student-t quantile for `df` degrees of freedom.
fn t_quantile_95(df: usize) -> f64 {
    const TABLE: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    match df {
        0 => f64::NAN,
        1..=10 => TABLE[df - 1],
        11..=30 => 2.042 + (2.228 - 2.042) * (30 - df) as f64 / 20.0,
        _ => 1.96,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatedLrReport {
    pub n: usize,
    pub repetitions: usize,
    pub w: f64,
    pub label_accuracy: Vec<f64>,
    pub mean: f64,
    /// Half-width of the 95% confidence interval of the mean.
    pub ci95: f64,
}

/// Proxy-mode replacement repeated with fresh samples (seeds `seed`,
/// `seed+1`, ...), reporting label accuracy under the oracle.
pub fn repeated_proxy_lr(
    dataset: &Dataset,
    n: usize,
    repetitions: usize,
    oracle: &dyn Evaluator,
    embedder: &dyn Embedder,
    options: &ReplaceOptions,
) -> Result<RepeatedLrReport> {
    if repetitions == 0 {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let mut accs = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let opts = ReplaceOptions {
            seed: options.seed.wrapping_add(r as u64),
            ..options.clone()
        };
        let (out, _) = replace_labels(dataset, LrMode::Proxy { n }, oracle, embedder, &opts)?;
        accs.push(label_accuracy(&out, oracle)?);
    }
    let k = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / k;
    let ci95 = if accs.len() > 1 {
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0);
        t_quantile_95(accs.len() - 1) * (var / k).sqrt()
    } else {
        0.0
    };
    Ok(RepeatedLrReport {
        n,
        repetitions,
        w: options.w,
        label_accuracy: accs,
        mean,
        ci95,
    })
}
