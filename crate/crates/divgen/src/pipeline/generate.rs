//! The iterative generation loop.
//!
//! Each iteration picks the least-filled label, optionally draws one example
//! per label from the pool, turns the frequency ledger into a suppression
//! bias, requests a batch of completions and folds the cleaned texts back into
//! the dataset, the example pool and the ledger. All randomness is derived
//! from `(seed, iteration)`, so a run resumed from its checkpoint produces the
//! same bytes as an uninterrupted one.

use std::path::PathBuf;

use indexmap::IndexMap;
use log::{info, warn};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{tokenize_for_ledger, Backend, CompletionRequest, RequestLog};
use crate::error::{Error, Result};
use crate::pipeline::dataset::{DataInstance, Dataset, RunMetadata, Source};
use crate::pipeline::prompt::render_prompt;
use crate::pipeline::task::{LabeledText, TaskSpec};
use crate::sampling::{compute_suppression_bias, BiasMap, FrequencyLedger, SamplingParams};

/// Shortest cleaned completion kept as an instance, in characters.
pub const MIN_TEXT_CHARS: usize = 3;

/// Per-label pools of texts usable as in-prompt examples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExamplePool {
    per_label: IndexMap<String, Vec<String>>,
}

impl ExamplePool {
    pub fn new(labels: &[String]) -> Self {
        Self {
            per_label: labels.iter().map(|l| (l.clone(), Vec::new())).collect(),
        }
    }

    pub fn add(&mut self, label: &str, text: &str) -> Result<()> {
        self.per_label
            .get_mut(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?
            .push(text.to_string());
        Ok(())
    }

    pub fn texts(&self, label: &str) -> &[String] {
        self.per_label.get(label).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.per_label.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The label with the fewest instances; earlier labels win ties.
pub fn next_label<'a>(counts: &IndexMap<String, usize>, labels: &'a [String]) -> &'a str {
    labels
        .iter()
        .min_by_key(|l| counts.get(*l).copied().unwrap_or(0))
        .map(String::as_str)
        .expect("at least one label")
}

/// In-prompt examples for one request.
///
/// Unseeded runs stay zero-shot for the whole first cycle. Otherwise one
/// uniformly drawn example per label, in label order; labels whose pool is
/// still empty are skipped.
pub fn select_examples(
    pool: &ExamplePool,
    cycle_index: u64,
    seeded: bool,
    labels: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledText> {
    if cycle_index == 0 && !seeded {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        match pool.texts(label).choose(rng) {
            Some(text) => out.push(LabeledText::new(text.clone(), label.clone())),
            None => warn!("no example available for label `{label}`; skipping it in the prompt"),
        }
    }
    out
}

/// Trims a raw completion and drops anything from the closing quote on.
/// Returns `None` for texts shorter than [`MIN_TEXT_CHARS`].
pub fn clean_completion(raw: &str) -> Option<String> {
    let text = raw.split('"').next().unwrap_or("").trim();
    let text = text.trim_start_matches('"').trim();
    (text.chars().count() >= MIN_TEXT_CHARS).then(|| text.to_string())
}

fn mix(seed: u64, iteration: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed
        ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ stream.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Default)]
pub struct GenerationOptions {
    pub seed: u64,
    /// Rewritten after every iteration.
    pub checkpoint: Option<PathBuf>,
    pub request_log: Option<PathBuf>,
    /// Stamp start/finish times into the run metadata. Off by default so
    /// fixed-seed runs are byte-identical.
    pub record_timestamps: bool,
    /// Abort after this many consecutive batches yield nothing; 0 means 50.
    pub max_empty_batches: usize,
}

struct RunState {
    dataset: Dataset,
    counts: IndexMap<String, usize>,
    ledger: FrequencyLedger,
    pool: ExamplePool,
}

impl RunState {
    fn rebuild(task: &TaskSpec, backend: &dyn Backend, dataset: Dataset) -> Result<Self> {
        let mut pool = ExamplePool::new(&task.labels);
        for seed in &task.seed_examples {
            pool.add(&seed.label, &seed.text)?;
        }
        let mut ledger = FrequencyLedger::new();
        for inst in dataset.instances.iter().filter(|i| i.source == Source::Generated) {
            ledger.record(&tokenize_for_ledger(backend, &inst.text));
            pool.add(&inst.specified_label, &inst.text)?;
        }
        let counts = dataset.specified_counts();
        Ok(Self {
            dataset,
            counts,
            ledger,
            pool,
        })
    }
}

fn quotas(task: &TaskSpec) -> IndexMap<String, usize> {
    let n = task.labels.len();
    task.labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), task.target_count / n + usize::from(i < task.target_count % n)))
        .collect()
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Generates a dataset for `task` from scratch.
pub fn run_generation(task: &TaskSpec, backend: &dyn Backend, options: &GenerationOptions) -> Result<Dataset> {
    task.validate()?;
    let mut dataset = Dataset::new(RunMetadata {
        task: task.name.clone(),
        labels: task.labels.clone(),
        seed: options.seed,
        backend_id: backend.id().to_string(),
        diversification: task.diversification.clone(),
        prompt_template: task.prompt_template,
        target_count: task.target_count,
        batch_size: task.batch_size,
        started_at: options.record_timestamps.then(now),
        ..Default::default()
    });
    if task.include_seeds {
        for (i, seed) in task.seed_examples.iter().enumerate() {
            let mut inst = DataInstance::generated(format!("s{i:04}"), seed.text.clone(), &seed.label, 0);
            inst.source = Source::Seed;
            dataset.instances.push(inst);
        }
    }
    let log = match &options.request_log {
        Some(path) => Some(RequestLog::create(path)?),
        None => None,
    };
    drive(task, backend, options, RunState::rebuild(task, backend, dataset)?, log)
}

/// Continues an interrupted run from its checkpointed dataset.
pub fn resume_generation(
    task: &TaskSpec,
    backend: &dyn Backend,
    options: &GenerationOptions,
    checkpoint: Dataset,
) -> Result<Dataset> {
    task.validate()?;
    if checkpoint.metadata.task != task.name || checkpoint.metadata.seed != options.seed {
        return Err(Error::InvalidTask(
            "checkpoint belongs to a different task or seed".into(),
        ));
    }
    let log = match &options.request_log {
        Some(path) => {
            let calls = if path.exists() { RequestLog::read(path)?.len() as u64 } else { 0 };
            Some(RequestLog::append(path, calls)?)
        }
        None => None,
    };
    drive(task, backend, options, RunState::rebuild(task, backend, checkpoint)?, log)
}

fn drive(
    task: &TaskSpec,
    backend: &dyn Backend,
    options: &GenerationOptions,
    mut state: RunState,
    mut log: Option<RequestLog>,
) -> Result<Dataset> {
    let quotas = quotas(task);
    let seeded = !task.seed_examples.is_empty();
    let suppress = task.diversification.logit_suppression;
    if suppress && !backend.tokenizer().bias_compatible() {
        warn!("backend tokenizer ids are local only; logit suppression is disabled for this run");
    }
    let max_empty = if options.max_empty_batches == 0 { 50 } else { options.max_empty_batches };
    let mut empty_streak = 0;

    loop {
        let open: Vec<String> = task
            .labels
            .iter()
            .filter(|l| state.counts[*l] < quotas[*l])
            .cloned()
            .collect();
        if open.is_empty() {
            break;
        }
        let label = next_label(&state.counts, &open).to_string();
        let iteration = state.dataset.metadata.iterations + 1;
        let cycle = (iteration - 1) / task.labels.len() as u64;

        let mut example_rng = ChaCha8Rng::seed_from_u64(mix(options.seed, iteration, 2));
        let examples = select_examples(&state.pool, cycle, seeded, &task.labels, &mut example_rng);
        let bias = if suppress && backend.tokenizer().bias_compatible() {
            compute_suppression_bias(&state.ledger)
        } else {
            BiasMap::new()
        };
        let wanted = (quotas[&label] - state.counts[&label]).min(task.batch_size);
        let request = CompletionRequest {
            prompt: render_prompt(task, &label, &examples)?,
            n_completions: wanted,
            params: SamplingParams {
                temperature: task.diversification.temperature,
                top_p: task.sampling.top_p,
                frequency_penalty: task.sampling.frequency_penalty,
                max_tokens: task.sampling.max_tokens,
                rng_seed: mix(options.seed, iteration, 1),
            },
            logit_bias: bias,
            stop_sequences: crate::backend::default_stop_sequences(),
        };
        let response = backend.complete(&request)?;
        if let Some(log) = log.as_mut() {
            log.record(iteration, &label, &request, &response)?;
        }

        let returned = response.texts.len();
        let mut kept = 0;
        for raw in &response.texts {
            if kept == wanted {
                break;
            }
            let Some(text) = clean_completion(raw) else { continue };
            let inst = DataInstance::generated(format!("g{iteration:06}-{kept:02}"), text, &label, iteration);
            state.ledger.record(&tokenize_for_ledger(backend, &inst.text));
            state.pool.add(&label, &inst.text)?;
            state.dataset.instances.push(inst);
            kept += 1;
        }
        *state.counts.get_mut(&label).expect("known label") += kept;

        let meta = &mut state.dataset.metadata;
        meta.iterations = iteration;
        meta.dropped_completions += (returned - kept) as u64;
        meta.usage += response.usage;
        if let Some(path) = &options.checkpoint {
            state.dataset.write(path)?;
        }
        info!("iteration {iteration}: label `{label}`, kept {kept}/{returned}");

        if kept == 0 {
            empty_streak += 1;
            if empty_streak >= max_empty {
                return Err(Error::Stalled(format!(
                    "{empty_streak} consecutive batches produced no usable text"
                )));
            }
        } else {
            empty_streak = 0;
        }
    }

    let meta = &mut state.dataset.metadata;
    meta.complete = true;
    if options.record_timestamps {
        meta.finished_at = Some(now());
    }
    if let Some(path) = &options.checkpoint {
        state.dataset.write(path)?;
    }
    Ok(state.dataset)
}
