//! Dataset generation: task definitions, prompts, the generation loop and
//! its on-disk formats.

pub mod budget;
pub mod dataset;
pub mod generate;
pub mod prompt;
pub mod task;

use std::path::PathBuf;

pub use budget::{actual_cost, cents, estimate_budget, estimate_budget_for, BudgetEstimate};
pub use dataset::{
    read_labeled_jsonl, write_labeled_jsonl, DataInstance, Dataset, OosState, Provenance, RunMetadata, Source,
};
pub use generate::{
    clean_completion, next_label, resume_generation, run_generation, select_examples, ExamplePool,
    GenerationOptions,
};
pub use prompt::{render_prompt, EXAMPLE_DELIMITER};
pub use task::{Diversification, LabeledText, MockTaskConfig, PromptTemplate, SamplingSettings, TaskSpec};

use crate::backend::MockBackend;
use crate::error::{Error, Result};
use crate::mock_lm::{demo_keywords, demo_task, LabelConditionedLm, NGramModel};

/// Additive smoothing of the bundled task's mock model. Add-one drowns the
/// sparser trigram contexts of the small template corpus in noise.
pub const DEMO_SMOOTHING: f64 = 0.01;

/// Task file for the bundled four-label emotion task. The mock corpus is
/// expected in `corpus/` next to the task file.
pub fn demo_spec(target_count: usize) -> TaskSpec {
    let labels: Vec<String> = demo_keywords().keys().cloned().collect();
    TaskSpec {
        name: "emotion-demo".into(),
        text_type: "sentence".into(),
        label_phrases: labels.iter().map(|l| (l.clone(), l.clone())).collect(),
        labels,
        prompt_template: PromptTemplate::A,
        target_count,
        batch_size: 20,
        seed_examples: Vec::new(),
        include_seeds: false,
        diversification: Diversification::default(),
        sampling: SamplingSettings::default(),
        mock: Some(MockTaskConfig {
            order: NGramModel::DEFAULT_ORDER,
            smoothing: DEMO_SMOOTHING,
            corpus_dir: PathBuf::from("corpus"),
            keywords: demo_keywords()
                .into_iter()
                .map(|(l, ws)| (l, ws.into_iter().collect()))
                .collect(),
        }),
    }
}

/// Mock backend over the in-memory demo corpus, wired to `task`'s phrases.
/// Model order and smoothing come from `task.mock` when present.
pub fn demo_backend(task: &TaskSpec) -> Result<MockBackend> {
    let synthetic = demo_task();
    let (order, smoothing) = task
        .mock
        .as_ref()
        .map_or((NGramModel::DEFAULT_ORDER, DEMO_SMOOTHING), |m| (m.order, m.smoothing));
    let lm = LabelConditionedLm::fit(synthetic.corpus(), order, smoothing)?;
    Ok(MockBackend::new(lm, task.phrase_pairs()))
}

/// Mock backend fitted on the corpus named by `task.mock`.
pub fn mock_backend(task: &TaskSpec) -> Result<MockBackend> {
    let mock = task
        .mock
        .as_ref()
        .ok_or_else(|| Error::InvalidTask("task has no [mock] section".into()))?;
    let (_, lm) = mock.fit(&task.labels)?;
    Ok(MockBackend::new(lm, task.phrase_pairs()))
}
