//! Linear max-margin classifier trained by stochastic subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::dot;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBinaryClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Logistic slope applied to the margin by [`confidence`](Self::confidence).
    pub calibration: f64,
    /// Fixed confidence of a stub that ignores its input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
}

impl LinearBinaryClassifier {
    /// A stub with confidence exactly 1 (`positive`) or 0 everywhere.
    pub fn constant(dimension: usize, positive: bool) -> Self {
        Self {
            weights: vec![0.0; dimension],
            bias: 0.0,
            calibration: 1.0,
            constant: Some(if positive { 1.0 } else { 0.0 }),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// Signed distance-like score; `±∞` for stubs.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self.constant {
            Some(c) if c > 0.5 => f64::INFINITY,
            Some(_) => f64::NEG_INFINITY,
            None => dot(&self.weights, x) + self.bias,
        }
    }

    /// Logistic squash of the margin, in `[0, 1]`.
    pub fn confidence(&self, x: &[f64]) -> f64 {
        match self.constant {
            Some(c) => c,
            None => 1.0 / (1.0 + (-self.calibration * self.margin(x)).exp()),
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.margin(x) > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    /// Regularization strength λ.
    pub l2: f64,
    /// Upper bound on passes over the data.
    pub max_iterations: usize,
    pub seed: u64,
    /// Minimum objective improvement that resets the patience counter.
    pub tolerance: f64,
    /// Passes without such an improvement before stopping.
    pub patience: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iterations: 10_000,
            seed: 0,
            tolerance: 1e-6,
            patience: 5,
        }
    }
}

/// `λ/2 (‖w‖² + b²) + mean hinge loss`. The bias is treated as one more
/// regularized weight on a constant feature.
pub fn svm_objective(weights: &[f64], bias: f64, examples: &[(Vec<f64>, f64)], l2: f64) -> f64 {
    let reg = 0.5 * l2 * (dot(weights, weights) + bias * bias);
    let hinge: f64 = examples
        .iter()
        .map(|(x, y)| (1.0 - y * (dot(weights, x) + bias)).max(0.0))
        .sum();
    reg + hinge / examples.len() as f64
}

/// Trains on `(x, y)` pairs with `y ∈ {-1, +1}`.
///
/// Each pass visits the examples in a seeded random order, taking step
/// `1/(λt)` and projecting onto the ball of radius `1/√λ`. The parameters
/// with the lowest objective seen at the end of a pass are returned.
pub fn sgd_train(examples: &[(Vec<f64>, f64)], config: &SgdConfig) -> Result<LinearBinaryClassifier> {
    let Some((first, _)) = examples.first() else {
        return Err(Error::TooFew { needed: 2, got: 0 });
    };
    if config.l2.is_nan() || config.l2 <= 0.0 {
        return Err(Error::OutOfRange(format!("l2 must be positive, got {}", config.l2)));
    }
    let dim = first.len();
    if examples.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Malformed("feature vectors differ in dimension".into()));
    }
    if examples.iter().any(|(_, y)| *y != 1.0 && *y != -1.0) {
        return Err(Error::OutOfRange("labels must be +1 or -1".into()));
    }
    let has_pos = examples.iter().any(|(_, y)| *y > 0.0);
    let has_neg = examples.iter().any(|(_, y)| *y < 0.0);
    if !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }

    let lambda = config.l2;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut t: u64 = 0;
    let mut best = (svm_objective(&w, b, examples, lambda), w.clone(), b);
    let mut stale = 0;

    for _ in 0..config.max_iterations {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let (x, y) = &examples[i];
            let violated = y * (dot(&w, x) + b) < 1.0;
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|wi| *wi *= shrink);
            b *= shrink;
            if violated {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += eta * y * xi;
                }
                b += eta * y;
            }
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|wi| *wi *= s);
                b *= s;
            }
        }
        let obj = svm_objective(&w, b, examples, lambda);
        if obj < best.0 - config.tolerance {
            best = (obj, w.clone(), b);
            stale = 0;
        } else {
            if obj < best.0 {
                best = (obj, w.clone(), b);
            }
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(LinearBinaryClassifier {
        weights: best.1,
        bias: best.2,
        calibration: 1.0,
        constant: None,
    })
}

/// One binary classifier per class, class `k` against the rest. A class
/// with no positives gets a constant-0 stub and a class covering every row a
/// constant-1 stub.
pub fn train_one_vs_rest(
    vectors: &[Vec<f64>],
    classes: &[usize],
    n_classes: usize,
    config: &SgdConfig,
) -> Result<Vec<LinearBinaryClassifier>> {
    let Some(first) = vectors.first() else {
        return Err(Error::TooFew { needed: 1, got: 0 });
    };
    let dim = first.len();
    (0..n_classes)
        .map(|k| {
            let positives = classes.iter().filter(|c| **c == k).count();
            if positives == 0 {
                log::warn!("class {k} has no positive examples; using a constant-0 stub");
                return Ok(LinearBinaryClassifier::constant(dim, false));
            }
            if positives == classes.len() {
                log::warn!("class {k} has no negative examples; using a constant-1 stub");
                return Ok(LinearBinaryClassifier::constant(dim, true));
            }
            let examples: Vec<(Vec<f64>, f64)> = vectors
                .iter()
                .zip(classes)
                .map(|(v, c)| (v.clone(), if *c == k { 1.0 } else { -1.0 }))
                .collect();
            let cfg = SgdConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            sgd_train(&examples, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn two_points() {
        let data = vec![(vec![1.0], 1.0), (vec![-1.0], -1.0)];
        let c = sgd_train(&data, &SgdConfig::default()).unwrap();
        assert!(c.predict(&[1.0]));
        assert!(!c.predict(&[-1.0]));
        let conf = c.confidence(&[1.0]);
        assert!(conf > 0.5 && conf < 1.0);
    }

    #[test]
    fn separable_clusters_train_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<(Vec<f64>, f64)> = (0..200)
            .map(|i| {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                // clusters at x0 = ±1.5, spread 0.5, so the gap is at least 1
                let x = vec![y * 1.5 + rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
                (x, y)
            })
            .collect();
        let c = sgd_train(&data, &SgdConfig::default()).unwrap();
        assert!(data.iter().all(|(x, y)| c.predict(x) == (*y > 0.0)));
    }

    #[test]
    fn objective_close_to_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // overlapping classes so the optimum has nonzero hinge loss
        let data: Vec<(Vec<f64>, f64)> = (0..30)
            .map(|i| {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                (vec![y * 0.5 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], y)
            })
            .collect();
        let l2 = 0.1;
        let config = SgdConfig {
            l2,
            ..Default::default()
        };
        let c = sgd_train(&data, &config).unwrap();
        let got = svm_objective(&c.weights, c.bias, &data, l2);

        let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.05).collect();
        let mut best = f64::INFINITY;
        for &w0 in &grid {
            for &w1 in &grid {
                for &b in &grid {
                    best = best.min(svm_objective(&[w0, w1], b, &data, l2));
                }
            }
        }
        assert!(got <= best * 1.05, "sgd {got} vs grid {best}");
    }

    #[test]
    fn rejects_single_class_and_bad_labels() {
        let one = vec![(vec![1.0], 1.0), (vec![2.0], 1.0)];
        assert!(matches!(sgd_train(&one, &SgdConfig::default()), Err(Error::SingleClass)));
        let bad = vec![(vec![1.0], 0.0), (vec![2.0], 1.0)];
        assert!(sgd_train(&bad, &SgdConfig::default()).is_err());
        assert!(sgd_train(&[], &SgdConfig::default()).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let data = vec![(vec![1.0, 0.2], 1.0), (vec![-1.0, 0.1], -1.0), (vec![0.3, -0.9], 1.0)];
        let cfg = SgdConfig::default();
        assert_eq!(sgd_train(&data, &cfg).unwrap(), sgd_train(&data, &cfg).unwrap());
    }

    #[test]
    fn constant_classifiers() {
        assert_eq!(LinearBinaryClassifier::constant(3, false).confidence(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(LinearBinaryClassifier::constant(3, true).confidence(&[1.0, 2.0, 3.0]), 1.0);
    }
}
