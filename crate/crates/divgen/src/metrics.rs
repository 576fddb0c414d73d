//! Dataset quality metrics: remote-clique diversity, distance to a reference
//! set, and label accuracy under an evaluator.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::embedding::{Distance, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::mock_lm::SyntheticTask;
use crate::pipeline::{Dataset, LabeledText};
use crate::student::{evaluate_student, train_student, StudentConfig};

/// Predicts a task label for a text.
pub trait Evaluator {
    fn labels(&self) -> &[String];
    fn predict(&self, text: &str) -> Result<String>;
}

/// The keyword oracle as a classifier: the label with the most keyword hits,
/// earlier labels winning ties. Texts without any keyword get the first label.
impl Evaluator for SyntheticTask {
    fn labels(&self) -> &[String] {
        SyntheticTask::labels(self)
    }

    fn predict(&self, text: &str) -> Result<String> {
        let hits = self.keyword_hits(text);
        let best = hits
            .iter()
            .enumerate()
            .fold(0, |best, (i, h)| if *h > hits[best] { i } else { best });
        Ok(SyntheticTask::labels(self)[best].clone())
    }
}

/// Mean over points of the mean distance to every other point.
pub fn remote_clique_diversity(vectors: &[Embedding], distance: Distance) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::TooFew { needed: 2, got: n });
    }
    // every row mean has n - 1 terms, so the mean of row means is the mean
    // over ordered pairs; each unordered pair is computed once
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += distance.between(&vectors[i], &vectors[j]);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Mean distance over all pairs drawn one from each set.
pub fn cross_distance(a: &[Embedding], b: &[Embedding], distance: Distance) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFew {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    let sum: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| distance.between(x, y)).sum::<f64>())
        .sum();
    Ok(sum / (a.len() * b.len()) as f64)
}

/// Display transform of a distance, 1 at distance 0.
pub fn similarity(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

/// Fraction of instances whose evaluator prediction equals their current
/// label. Before any curation the current label is the specified one. An
/// empty dataset scores 0.
pub fn label_accuracy(dataset: &Dataset, evaluator: &dyn Evaluator) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for inst in &dataset.instances {
        if evaluator.predict(&inst.text)? == inst.current_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub embedder: String,
    pub distance: Distance,
    pub n_instances: usize,
    pub per_label_counts: IndexMap<String, usize>,
    pub diversity: f64,
    pub cross_distance: Option<f64>,
    pub similarity: Option<f64>,
    pub label_accuracy: Option<f64>,
    pub student_accuracy: Option<f64>,
}

/// Optional inputs of [`compute_metrics`].
#[derive(Default)]
pub struct MetricsInputs<'a> {
    pub reference: Option<&'a [String]>,
    pub evaluator: Option<&'a dyn Evaluator>,
    /// Held-out set for a student trained on the dataset.
    pub student_test: Option<&'a [LabeledText]>,
    pub student: StudentConfig,
}

pub fn compute_metrics(
    dataset: &Dataset,
    embedder: &dyn Embedder,
    distance: Distance,
    inputs: &MetricsInputs<'_>,
) -> Result<MetricsReport> {
    let vectors = embedder.embed(&dataset.texts())?;
    let diversity = remote_clique_diversity(&vectors, distance)?;
    let cross = match inputs.reference {
        Some(reference) => {
            let texts: Vec<&str> = reference.iter().map(String::as_str).collect();
            Some(cross_distance(&vectors, &embedder.embed(&texts)?, distance)?)
        }
        None => None,
    };
    let label_accuracy = match inputs.evaluator {
        Some(e) => Some(label_accuracy(dataset, e)?),
        None => None,
    };
    let student_accuracy = match inputs.student_test {
        Some(test) => {
            let model = train_student(dataset, embedder, &inputs.student)?;
            Some(evaluate_student(&model, embedder, test)?)
        }
        None => None,
    };
    Ok(MetricsReport {
        embedder: embedder.id().to_string(),
        distance,
        n_instances: dataset.len(),
        per_label_counts: dataset.current_counts(),
        diversity,
        cross_distance: cross,
        similarity: cross.map(similarity),
        label_accuracy,
        student_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock_lm::demo_task;
    use crate::pipeline::{DataInstance, RunMetadata};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_diversity(v: &[Embedding], d: Distance) -> f64 {
        let n = v.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if i != j {
                    row += d.between(&v[i], &v[j]);
                }
            }
            total += row / (n - 1) as f64;
        }
        total / n as f64
    }

    fn brute_cross(a: &[Embedding], b: &[Embedding], d: Distance) -> f64 {
        let mut total = 0.0;
        for x in a {
            for y in b {
                total += d.between(x, y);
            }
        }
        total / (a.len() * b.len()) as f64
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Embedding> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn diversity_examples() {
        let d = Distance::Cosine;
        assert_eq!(remote_clique_diversity(&[vec![1.0, 2.0], vec![1.0, 2.0]], d).unwrap(), 0.0);
        let orth = remote_clique_diversity(&[vec![1.0, 0.0], vec![0.0, 1.0]], d).unwrap();
        assert!((orth - 1.0).abs() < 1e-12);
        assert!(remote_clique_diversity(&[vec![1.0]], d).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for d in [Distance::Cosine, Distance::Euclidean] {
            for _ in 0..25 {
                let n = rng.random_range(2..=50);
                let set = random_set(&mut rng, n, 8);
                let fast = remote_clique_diversity(&set, d).unwrap();
                assert!((fast - brute_diversity(&set, d)).abs() < 1e-9);
            }
            let a = random_set(&mut rng, 5, 8);
            let b = random_set(&mut rng, 5, 8);
            assert!((cross_distance(&a, &b, d).unwrap() - brute_cross(&a, &b, d)).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_examples() {
        let d = Distance::Cosine;
        let x = vec![vec![0.6, 0.8]];
        assert_eq!(cross_distance(&x, &x, d).unwrap(), 0.0);
        assert_eq!(similarity(0.0), 1.0);
        let y = vec![vec![0.8, -0.6]];
        assert!((cross_distance(&x, &y, d).unwrap() - 1.0).abs() < 1e-12);
        assert!(cross_distance(&x, &[], d).is_err());
    }

    #[test]
    fn duplicating_a_point_can_raise_diversity() {
        // Three coincident points and one outlier: copying the outlier raises
        // the average distance from 0.5 to 0.6.
        let d = Distance::Euclidean;
        let base = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let before = remote_clique_diversity(&base, d).unwrap();
        let mut dup = base.clone();
        dup.push(vec![1.0]);
        let after = remote_clique_diversity(&dup, d).unwrap();
        assert!((before - 0.5).abs() < 1e-12);
        assert!((after - 0.6).abs() < 1e-12);
    }

    fn dataset(rows: &[(&str, &str)]) -> Dataset {
        let mut ds = Dataset::new(RunMetadata {
            task: "t".into(),
            labels: vec!["joy".into(), "anger".into(), "fear".into(), "sadness".into()],
            ..Default::default()
        });
        for (i, (text, label)) in rows.iter().enumerate() {
            ds.instances.push(DataInstance::generated(format!("i{i}"), text.to_string(), label, 1));
        }
        ds
    }

    #[test]
    fn label_accuracy_hand_count() {
        let oracle = demo_task();
        let kw = oracle.keywords().clone();
        let word = |l: &str| kw[l].iter().next().unwrap().clone();
        let rows: Vec<(String, &str)> = vec![
            (format!("so much {}", word("joy")), "joy"),
            (format!("so much {}", word("joy")), "anger"),
            (format!("a bit of {}", word("anger")), "anger"),
            (format!("a bit of {}", word("fear")), "fear"),
            (format!("full of {}", word("sadness")), "sadness"),
            (format!("full of {}", word("sadness")), "joy"),
            (format!("{} and more {}", word("fear"), word("fear")), "fear"),
            (format!("nothing {}", word("anger")), "sadness"),
            (format!("a {} day", word("joy")), "joy"),
            (format!("deep {}", word("fear")), "anger"),
        ];
        let borrowed: Vec<(&str, &str)> = rows.iter().map(|(t, l)| (t.as_str(), *l)).collect();
        // correct rows: 0, 2, 3, 4, 6, 8
        let acc = label_accuracy(&dataset(&borrowed), &oracle).unwrap();
        assert!((acc - 0.6).abs() < 1e-12);
    }

    #[test]
    fn swapped_two_class_labels_score_zero() {
        let oracle = demo_task();
        let kw = oracle.keywords().clone();
        let j = kw["joy"].iter().next().unwrap().clone();
        let a = kw["anger"].iter().next().unwrap().clone();
        let ds = dataset(&[(&j, "anger"), (&a, "joy"), (&j, "anger")]);
        assert_eq!(label_accuracy(&ds, &oracle).unwrap(), 0.0);
    }

    fn point_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..12).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), n))
    }

    proptest! {
        #[test]
        fn diversity_is_permutation_invariant(set in point_set(), seed in any::<u64>()) {
            let mut shuffled = set.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            for d in [Distance::Cosine, Distance::Euclidean] {
                let a = remote_clique_diversity(&set, d).unwrap();
                let b = remote_clique_diversity(&shuffled, d).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cross_distance_is_permutation_invariant(a in point_set(), b in point_set()) {
            let mut ra = a.clone();
            ra.reverse();
            let d = Distance::Cosine;
            prop_assert!((cross_distance(&a, &b, d).unwrap() - cross_distance(&ra, &b, d).unwrap()).abs() < 1e-9);
            prop_assert!((cross_distance(&a, &b, d).unwrap() - cross_distance(&b, &a, d).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn copies_of_one_point_have_zero_diversity(p in prop::collection::vec(-5.0f64..5.0, 3), k in 2usize..20) {
            let set = vec![p; k];
            for d in [Distance::Cosine, Distance::Euclidean] {
                prop_assert!(remote_clique_diversity(&set, d).unwrap().abs() < 1e-12);
            }
        }

        #[test]
        fn doubling_the_whole_set_never_raises_diversity(set in point_set()) {
            let mut doubled = set.clone();
            doubled.extend(set.iter().cloned());
            for d in [Distance::Cosine, Distance::Euclidean] {
                let before = remote_clique_diversity(&set, d).unwrap();
                let after = remote_clique_diversity(&doubled, d).unwrap();
                prop_assert!(after <= before + 1e-12);
            }
        }

        #[test]
        fn matches_brute_force_on_random_sets(set in point_set()) {
            for d in [Distance::Cosine, Distance::Euclidean] {
                let fast = remote_clique_diversity(&set, d).unwrap();
                prop_assert!((fast - brute_diversity(&set, d)).abs() < 1e-9);
            }
        }
    }
}
