//! Per-task annotation state rebuilt from the dataset file, the latest
//! snapshot and the event log.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use divgen::curation::{choose_label, train_proxies, ProxyModelSet, SgdConfig, DEFAULT_W, INSPECTION_BUDGETS};
use divgen::embedding::{Distance, Embedder, Embedding};
use divgen::metrics::{remote_clique_diversity, MetricsReport};
use divgen::pipeline::{Dataset, OosState, Provenance};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::events::{apply_event, digest, Action, AnnotationEvent, EventLog, Snapshot};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Seed of the random review order.
    pub seed: u64,
    /// Write a snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
    /// Weight of the specified label when proxies pick labels.
    pub w: f64,
    pub sgd: SgdConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            snapshot_every: 50,
            w: DEFAULT_W,
            sgd: SgdConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueStrategy {
    #[default]
    Random,
    LowConfidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportVariant {
    Raw,
    #[serde(alias = "lr_applied")]
    Lr,
    #[serde(alias = "oos_filtered")]
    Oosf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: String,
    pub text: String,
    pub specified_label: String,
    pub current_label: String,
    pub label_provenance: Provenance,
    pub oos_state: OosState,
    /// Proxy confidence per label, once proxies are trained.
    pub proxy_scores: Option<IndexMap<String, f64>>,
    /// Blended score per label, once proxies are trained.
    pub final_scores: Option<IndexMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxySummary {
    pub trained_on: usize,
    pub positives: IndexMap<String, usize>,
    pub stub_labels: Vec<String>,
    pub training_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    #[default]
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub job_id: u64,
    pub summary: Option<ProxySummary>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub name: String,
    pub labels: Vec<String>,
    pub n_instances: usize,
    pub version: u64,
    pub n_inspected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub version: u64,
    pub n_inspected: usize,
    pub n_human_labeled: usize,
    pub n_oos_flagged: usize,
    /// Flagged out-of-scope share of inspected instances.
    pub oos_ratio: Option<f64>,
    /// Share of human-labeled instances whose label equals the specified one.
    pub label_accuracy_estimate: Option<f64>,
    pub milestones: Vec<usize>,
    pub proxies_trained: bool,
    pub report: MetricsReport,
}

/// Acknowledgment of a stored event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub event: AnnotationEvent,
    pub version: u64,
}

pub struct TaskState {
    name: String,
    dir: PathBuf,
    base_digest: String,
    current: Dataset,
    index: HashMap<String, usize>,
    vectors: Vec<Embedding>,
    /// Fixed random review order over instance positions.
    order: Vec<usize>,
    version: u64,
    proxies: Option<ProxyModelSet>,
    scores: Vec<Vec<f64>>,
    diversity: Option<f64>,
    job: JobStatus,
}

fn inspected(inst: &divgen::pipeline::DataInstance) -> bool {
    inst.label_provenance == Provenance::Human || inst.oos_state != OosState::Unknown
}

impl TaskState {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn dataset(&self) -> &Dataset {
        &self.current
    }

    pub fn job(&self) -> &JobStatus {
        &self.job
    }

    pub fn summary(&self) -> TaskSummary {
        TaskSummary {
            name: self.name.clone(),
            labels: self.current.labels().to_vec(),
            n_instances: self.current.len(),
            version: self.version,
            n_inspected: self.current.instances.iter().filter(|i| inspected(i)).count(),
        }
    }

    fn check(&self, instance_id: &str, action: &Action) -> ServiceResult<()> {
        if !self.index.contains_key(instance_id) {
            return Err(ServiceError::unknown_instance(instance_id));
        }
        if let Action::Relabel(label) = action {
            if !self.current.labels().contains(label) {
                return Err(ServiceError::invalid_label(label));
            }
        }
        Ok(())
    }

    fn apply(&mut self, event: &AnnotationEvent) -> ServiceResult<()> {
        apply_event(&mut self.current, event)?;
        self.version = event.event_id;
        Ok(())
    }

    fn item(&self, i: usize, w: f64) -> ServiceResult<QueueItem> {
        let inst = &self.current.instances[i];
        let (proxy_scores, final_scores) = match self.scores.get(i) {
            Some(scores) if self.proxies.is_some() => {
                let labels = self.current.labels();
                let specified = self.current.label_index(&inst.specified_label);
                let mut finals = IndexMap::new();
                for (k, (l, s)) in labels.iter().zip(scores).enumerate() {
                    let s_s = if Some(k) == specified { 1.0 } else { 0.0 };
                    finals.insert(l.clone(), divgen::curation::final_score(s_s, *s, w)?);
                }
                (Some(labels.iter().cloned().zip(scores.iter().copied()).collect()), Some(finals))
            }
            _ => (None, None),
        };
        Ok(QueueItem {
            id: inst.id.clone(),
            text: inst.text.clone(),
            specified_label: inst.specified_label.clone(),
            current_label: inst.current_label.clone(),
            label_provenance: inst.label_provenance,
            oos_state: inst.oos_state,
            proxy_scores,
            final_scores,
        })
    }

    /// Up to `n` uninspected instances whose label came from generation or
    /// a proxy.
    pub fn queue(&self, n: usize, strategy: QueueStrategy, w: f64) -> ServiceResult<Vec<QueueItem>> {
        let pending = |i: &usize| {
            let inst = &self.current.instances[*i];
            matches!(inst.label_provenance, Provenance::Specified | Provenance::Proxy) && !inspected(inst)
        };
        let picked: Vec<usize> = match strategy {
            QueueStrategy::Random => self.order.iter().copied().filter(pending).take(n).collect(),
            QueueStrategy::LowConfidence => {
                if self.proxies.is_none() {
                    return Err(ServiceError::conflict(
                        "proxies_required",
                        "low_confidence ordering needs trained proxies",
                    ));
                }
                let mut candidates: Vec<(f64, usize)> = (0..self.current.len())
                    .filter(pending)
                    .map(|i| {
                        let inst = &self.current.instances[i];
                        let k = self.current.label_index(&inst.current_label).unwrap_or(0);
                        (self.scores[i][k], i)
                    })
                    .collect();
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                candidates.into_iter().take(n).map(|(_, i)| i).collect()
            }
        };
        picked.into_iter().map(|i| self.item(i, w)).collect()
    }

    pub fn export(&self, variant: ExportVariant, w: f64) -> ServiceResult<Dataset> {
        let mut out = self.current.clone();
        match variant {
            ExportVariant::Raw => {}
            ExportVariant::Oosf => out.instances.retain(|i| i.oos_state != OosState::OutOfScope),
            ExportVariant::Lr => {
                let labels = out.labels().to_vec();
                for (i, inst) in out.instances.iter_mut().enumerate() {
                    if matches!(inst.label_provenance, Provenance::Human | Provenance::Oracle) {
                        continue;
                    }
                    if self.proxies.is_none() {
                        return Err(ServiceError::conflict(
                            "proxies_required",
                            "train proxies before exporting with label replacement",
                        ));
                    }
                    let specified = self
                        .current
                        .label_index(&inst.specified_label)
                        .ok_or_else(|| ServiceError::invalid_label(&inst.specified_label))?;
                    let k = choose_label(specified, &self.scores[i], w)?;
                    inst.current_label = labels[k].clone();
                    inst.label_provenance = Provenance::Proxy;
                }
            }
        }
        Ok(out)
    }

    pub fn metrics(&self, embedder_id: &str) -> ServiceMetrics {
        let instances = &self.current.instances;
        let human: Vec<_> = instances
            .iter()
            .filter(|i| i.label_provenance == Provenance::Human)
            .collect();
        let n_inspected = instances.iter().filter(|i| inspected(i)).count();
        let flagged = instances.iter().filter(|i| i.oos_state == OosState::OutOfScope).count();
        let agree = human.iter().filter(|i| i.current_label == i.specified_label).count();
        ServiceMetrics {
            version: self.version,
            n_inspected,
            n_human_labeled: human.len(),
            n_oos_flagged: flagged,
            oos_ratio: (n_inspected > 0).then(|| flagged as f64 / n_inspected as f64),
            label_accuracy_estimate: (!human.is_empty()).then(|| agree as f64 / human.len() as f64),
            milestones: INSPECTION_BUDGETS.to_vec(),
            proxies_trained: self.proxies.is_some(),
            report: MetricsReport {
                embedder: embedder_id.to_string(),
                distance: Distance::Cosine,
                n_instances: instances.len(),
                per_label_counts: self.current.current_counts(),
                diversity: self.diversity.unwrap_or(0.0),
                cross_distance: None,
                similarity: None,
                label_accuracy: (!human.is_empty()).then(|| agree as f64 / human.len() as f64),
                student_accuracy: None,
            },
        }
    }

    fn snapshot(&self) -> ServiceResult<()> {
        Snapshot {
            last_event_id: self.version,
            base_sha256: self.base_digest.clone(),
            dataset: self.current.to_jsonl()?,
        }
        .write(&self.dir.join(SNAPSHOT_FILE))
    }
}

/// One task: its state plus the writer side of its event log.
pub struct TaskHandle {
    state: RwLock<TaskState>,
    log: Mutex<EventLog>,
    config: ServiceConfig,
    embedder: Arc<dyn Embedder>,
}

impl TaskHandle {
    /// Loads `{dir}/dataset.jsonl`, the newest matching snapshot and every
    /// later event.
    pub fn open(dir: &Path, config: ServiceConfig, embedder: Arc<dyn Embedder>) -> ServiceResult<Self> {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| ServiceError::internal(format!("bad task directory {}", dir.display())))?
            .to_string();
        let base_text = fs::read_to_string(dir.join(DATASET_FILE))?;
        let base = Dataset::from_jsonl(&base_text)?;
        let base_digest = digest(&base_text);
        let (log, events) = EventLog::open(&dir.join(EVENTS_FILE))?;

        let mut current = base.clone();
        let mut from = 0;
        if let Some(snap) = Snapshot::read(&dir.join(SNAPSHOT_FILE)) {
            if snap.base_sha256 == base_digest && snap.last_event_id <= log.last_id() {
                match Dataset::from_jsonl(&snap.dataset) {
                    Ok(ds) => {
                        current = ds;
                        from = snap.last_event_id;
                    }
                    Err(e) => log::warn!("ignoring snapshot for `{name}`: {e}"),
                }
            } else {
                log::warn!("snapshot for `{name}` does not match its dataset or log; replaying from scratch");
            }
        }
        let mut version = from;
        for event in events.iter().filter(|e| e.event_id > from) {
            apply_event(&mut current, event)?;
            version = event.event_id;
        }

        let index = current
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id.clone(), i))
            .collect();
        let vectors = embedder.embed(&current.texts())?;
        let diversity = remote_clique_diversity(&vectors, Distance::Cosine).ok();
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let state = TaskState {
            name,
            dir: dir.to_path_buf(),
            base_digest,
            current,
            index,
            vectors,
            order,
            version,
            proxies: None,
            scores: Vec::new(),
            diversity,
            job: JobStatus::default(),
        };
        Ok(Self {
            state: RwLock::new(state),
            log: Mutex::new(log),
            config,
            embedder,
        })
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, TaskState> {
        self.state.read().expect("task state lock")
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn embedder_id(&self) -> &str {
        self.embedder.id()
    }

    /// Validates, appends durably, then applies. Writers are serialized by
    /// the log lock, so event ids are dense and applied in order.
    pub fn annotate(&self, instance_id: &str, action: Action, annotator: &str) -> ServiceResult<Ack> {
        let mut log = self.log.lock().expect("event log lock");
        self.read().check(instance_id, &action)?;
        let event = log.append(instance_id, action, annotator)?;
        let mut state = self.state.write().expect("task state lock");
        state.apply(&event)?;
        if self.config.snapshot_every > 0 && event.event_id % self.config.snapshot_every == 0 {
            if let Err(e) = state.snapshot() {
                log::warn!("snapshot failed: {e}");
            }
        }
        Ok(Ack {
            version: state.version,
            event,
        })
    }

    /// Marks a retraining job as started and returns its id, or `None` if
    /// one is already running.
    pub fn begin_retrain(&self) -> Option<u64> {
        let mut state = self.state.write().expect("task state lock");
        if state.job.state == JobState::Running {
            return None;
        }
        let id = state.job.job_id + 1;
        state.job = JobStatus {
            state: JobState::Running,
            job_id: id,
            summary: None,
            error: None,
        };
        Some(id)
    }

    /// Trains proxies on every human- or oracle-labeled instance, re-scores
    /// all instances and records the outcome in the job status.
    pub fn run_retrain(&self, job_id: u64) -> ServiceResult<ProxySummary> {
        let result = self.train();
        let mut state = self.state.write().expect("task state lock");
        match result {
            Ok((proxies, summary)) => {
                state.scores = state.vectors.iter().map(|v| proxies.scores(v)).collect();
                state.proxies = Some(proxies);
                state.job = JobStatus {
                    state: JobState::Done,
                    job_id,
                    summary: Some(summary.clone()),
                    error: None,
                };
                Ok(summary)
            }
            Err(e) => {
                state.job = JobStatus {
                    state: JobState::Failed,
                    job_id,
                    summary: None,
                    error: Some(e.message.clone()),
                };
                Err(e)
            }
        }
    }

    fn train(&self) -> ServiceResult<(ProxyModelSet, ProxySummary)> {
        let dataset = self.read().current.clone();
        let labeled: BTreeMap<String, String> = dataset
            .instances
            .iter()
            .filter(|i| matches!(i.label_provenance, Provenance::Human | Provenance::Oracle))
            .map(|i| (i.id.clone(), i.current_label.clone()))
            .collect();
        if labeled.is_empty() {
            return Err(ServiceError::conflict("no_labeled_data", "no human or oracle labels to train on"));
        }
        let ids: Vec<String> = labeled.keys().cloned().collect();
        let proxies = train_proxies(&dataset, &ids, &labeled, self.embedder.as_ref(), &self.config.sgd)?;

        let mut positives: IndexMap<String, usize> = dataset.labels().iter().map(|l| (l.clone(), 0)).collect();
        for label in labeled.values() {
            *positives.get_mut(label).expect("validated label") += 1;
        }
        let texts: Vec<&str> = ids.iter().map(|id| dataset.get(id).expect("known id").text.as_str()).collect();
        let vectors = self.embedder.embed(&texts)?;
        let correct = vectors
            .iter()
            .zip(&ids)
            .filter(|(v, id)| {
                let scores = proxies.scores(v);
                let best = scores
                    .iter()
                    .enumerate()
                    .fold(0, |b, (k, s)| if *s > scores[b] { k } else { b });
                dataset.labels()[best] == labeled[*id]
            })
            .count();
        let summary = ProxySummary {
            trained_on: ids.len(),
            positives,
            stub_labels: proxies.stub_labels().iter().map(|s| s.to_string()).collect(),
            training_accuracy: correct as f64 / ids.len() as f64,
        };
        Ok((proxies, summary))
    }
}

/// All tasks found under a data directory, one sub-directory each.
pub struct Service {
    tasks: IndexMap<String, Arc<TaskHandle>>,
}

impl Service {
    pub fn open(data_dir: &Path, config: ServiceConfig, embedder: Arc<dyn Embedder>) -> ServiceResult<Self> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(DATASET_FILE).is_file())
            .collect();
        dirs.sort();
        let mut tasks = IndexMap::new();
        for dir in dirs {
            let handle = TaskHandle::open(&dir, config.clone(), embedder.clone())?;
            let name = handle.read().name.clone();
            log::info!("loaded task `{name}` at version {}", handle.read().version);
            tasks.insert(name, Arc::new(handle));
        }
        Ok(Self { tasks })
    }

    pub fn task(&self, name: &str) -> ServiceResult<Arc<TaskHandle>> {
        self.tasks
            .get(name)
            .cloned()
            .ok_or_else(|| ServiceError::unknown_task(name))
    }

    pub fn summaries(&self) -> Vec<TaskSummary> {
        self.tasks.values().map(|t| t.read().summary()).collect()
    }
}
