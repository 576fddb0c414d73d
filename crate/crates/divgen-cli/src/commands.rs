use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use divgen::backend::{Backend, BpeTokenizer, OpenAiBackend, OpenAiConfig, TokenUsage};
use divgen::curation::{
    evaluate_oos_splits, filter_oos, repeated_proxy_lr, replace_labels, train_oos_model, train_proxies,
    CurationReport, LrMode, OosFilterReport, OosModel, OosSplitReport, ReplaceOptions, SgdConfig,
};
use divgen::metrics::{compute_metrics, MetricsInputs};
use divgen::mock_lm::demo_task;
use divgen::pipeline::{
    actual_cost, cents, demo_spec, estimate_budget, estimate_budget_for, mock_backend, read_labeled_jsonl,
    resume_generation, run_generation, BudgetEstimate, GenerationOptions,
};
use divgen_service::{ApiOptions, Service, ServiceConfig};
use indexmap::IndexMap;
use serde::Serialize;

use crate::inputs::{self, IdLabel};
use crate::report::emit;
use crate::{
    BackendKind, BudgetArgs, CurateLrArgs, CurateOosfArgs, GenerateArgs, GlobalArgs, InitDemoArgs, LrModeArg,
    MetricsArgs, ProxyKind, ServeArgs, TrainProxyArgs,
};

type LabelCounts = IndexMap<String, usize>;

fn path_string(p: &std::path::Path) -> String {
    p.display().to_string()
}

#[derive(Serialize)]
struct GenerateReport {
    command: &'static str,
    task: String,
    backend: String,
    seed: u64,
    temperature: f64,
    logit_suppression: bool,
    dataset: String,
    request_log: String,
    n_instances: usize,
    per_label_counts: LabelCounts,
    iterations: u64,
    dropped_completions: u64,
    usage: TokenUsage,
    estimate: BudgetEstimate,
    actual_cost: f64,
}

pub fn generate(g: &GlobalArgs, a: GenerateArgs) -> Result<()> {
    let started = Instant::now();
    let mut task = inputs::task(&a.task)?;
    if let Some(t) = a.temperature {
        task.diversification.temperature = t;
    }
    if let Some(s) = a.logit_suppression {
        task.diversification.logit_suppression = s;
    }
    if let Some(n) = a.target {
        task.target_count = n;
    }
    let backend: Box<dyn Backend> = match a.backend {
        BackendKind::Mock => Box::new(mock_backend(&task).context("mock backend needs a [mock] task section")?),
        BackendKind::Openai => {
            let config = OpenAiConfig::from_env(&a.model);
            match (&a.bpe_encoder, &a.bpe_merges) {
                (Some(enc), Some(merges)) => {
                    Box::new(OpenAiBackend::new(config, Box::new(BpeTokenizer::from_files(enc, merges)?)))
                }
                _ => Box::new(OpenAiBackend::without_vocabulary(config)),
            }
        }
    };
    let request_log = a.request_log.clone().unwrap_or_else(|| a.out.with_extension("requests.jsonl"));
    let options = GenerationOptions {
        seed: a.seed,
        checkpoint: a.checkpoint.clone(),
        request_log: Some(request_log.clone()),
        record_timestamps: a.timestamps,
        max_empty_batches: 0,
    };
    let dataset = match (&a.checkpoint, a.resume) {
        (Some(cp), true) if cp.exists() => {
            let partial = inputs::dataset(cp)?;
            resume_generation(&task, backend.as_ref(), &options, partial)?
        }
        _ => run_generation(&task, backend.as_ref(), &options)?,
    };
    dataset
        .write(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let usage = dataset.metadata.usage;
    let report = GenerateReport {
        command: "generate",
        task: task.name.clone(),
        backend: backend.id().to_string(),
        seed: a.seed,
        temperature: task.diversification.temperature,
        logit_suppression: task.diversification.logit_suppression,
        dataset: path_string(&a.out),
        request_log: path_string(&request_log),
        n_instances: dataset.len(),
        per_label_counts: dataset.current_counts(),
        iterations: dataset.metadata.iterations,
        dropped_completions: dataset.metadata.dropped_completions,
        usage,
        estimate: estimate_budget(&task, a.price),
        actual_cost: actual_cost(&usage, a.price),
    };
    emit(g, &report, started)
}

pub fn metrics(g: &GlobalArgs, a: MetricsArgs) -> Result<()> {
    let started = Instant::now();
    let dataset = inputs::dataset(&a.dataset)?;
    let embedder = inputs::embedder(&a.embed);
    let reference = a.reference.as_deref().map(inputs::reference_texts).transpose()?;
    let oracle = inputs::oracle(&a.oracle, dataset.labels())?;
    let student_test = match &a.student_test {
        Some(p) => Some(read_labeled_jsonl(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let report = compute_metrics(
        &dataset,
        embedder.as_ref(),
        inputs::distance(a.distance),
        &MetricsInputs {
            reference: reference.as_deref(),
            evaluator: oracle.as_deref(),
            student_test: student_test.as_deref(),
            student: Default::default(),
        },
    )?;
    emit(g, &report, started)
}

#[derive(Serialize)]
struct LrOutput {
    command: &'static str,
    dataset: String,
    out: Option<String>,
    #[serde(flatten)]
    report: CurationReport,
}

pub fn curate_lr(g: &GlobalArgs, a: CurateLrArgs) -> Result<()> {
    let started = Instant::now();
    let dataset = inputs::dataset(&a.dataset)?;
    let oracle = inputs::require_oracle(&a.oracle, dataset.labels())?;
    let embedder = inputs::embedder(&a.embed);
    let options = ReplaceOptions {
        w: a.w,
        seed: a.seed,
        sgd: SgdConfig {
            seed: a.seed,
            ..Default::default()
        },
    };
    if let Some(reps) = a.repetitions {
        if a.mode != LrModeArg::Proxy {
            bail!("--repetitions needs --mode proxy");
        }
        let report = repeated_proxy_lr(&dataset, a.n, reps, oracle.as_ref(), embedder.as_ref(), &options)?;
        return emit(g, &report, started);
    }
    let mode = match a.mode {
        LrModeArg::Oracle => LrMode::OracleAll,
        LrModeArg::Proxy => LrMode::Proxy { n: a.n },
    };
    let (out, report) = replace_labels(&dataset, mode, oracle.as_ref(), embedder.as_ref(), &options)?;
    if let Some(path) = &a.out {
        out.write(path).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(
        g,
        &LrOutput {
            command: "curate lr",
            dataset: path_string(&a.dataset),
            out: a.out.as_deref().map(path_string),
            report,
        },
        started,
    )
}

#[derive(Serialize)]
struct OosfOutput {
    command: &'static str,
    dataset: String,
    out: Option<String>,
    threshold: f64,
    annotations: Option<usize>,
    #[serde(flatten)]
    filter: OosFilterReport,
    held_out: Option<OosSplitReport>,
}

pub fn curate_oosf(g: &GlobalArgs, a: CurateOosfArgs) -> Result<()> {
    let started = Instant::now();
    let dataset = inputs::dataset(&a.dataset)?;
    let embedder = inputs::embedder(&a.embed);
    let sgd = SgdConfig {
        seed: a.seed,
        ..Default::default()
    };
    let (model, annotations, held_out) = match (&a.annotations, &a.model) {
        (Some(path), _) => {
            let ann = inputs::oos_annotations(path)?;
            let model = train_oos_model(&ann, embedder.as_ref(), a.threshold, &sgd)?;
            let held_out = a
                .splits
                .map(|k| evaluate_oos_splits(&ann, embedder.as_ref(), a.threshold, &sgd, k, a.seed))
                .transpose()?;
            (model, Some(ann.len()), held_out)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let model: OosModel = serde_json::from_str(&text)?;
            if model.embedder != embedder.id() {
                bail!("model was trained with embedder `{}`, not `{}`", model.embedder, embedder.id());
            }
            (model, None, None)
        }
        (None, None) => bail!("pass --annotations or --model"),
    };
    let (out, filter) = filter_oos(&dataset, &model, embedder.as_ref())?;
    if let Some(path) = &a.out {
        out.write(path).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(
        g,
        &OosfOutput {
            command: "curate oosf",
            dataset: path_string(&a.dataset),
            out: a.out.as_deref().map(path_string),
            threshold: model.threshold,
            annotations,
            filter,
            held_out,
        },
        started,
    )
}

#[derive(Serialize)]
struct TrainProxyReport {
    command: &'static str,
    kind: &'static str,
    embedder: String,
    trained_on: usize,
    positives: LabelCounts,
    stub_labels: Vec<String>,
    out: String,
}

pub fn train_proxy(g: &GlobalArgs, a: TrainProxyArgs) -> Result<()> {
    let started = Instant::now();
    let embedder = inputs::embedder(&a.embed);
    let sgd = SgdConfig {
        seed: a.seed,
        ..Default::default()
    };
    let (json, report) = match a.kind {
        ProxyKind::Label => {
            let path = a.dataset.as_ref().context("--dataset is required for label proxies")?;
            let dataset = inputs::dataset(path)?;
            let rows: Vec<IdLabel> = inputs::json_lines(&a.annotations)?;
            let mut labels = BTreeMap::new();
            let mut ids = Vec::new();
            for row in rows {
                if dataset.get(&row.id).is_none() {
                    bail!("annotated id `{}` is not in the dataset", row.id);
                }
                if dataset.label_index(&row.label).is_none() {
                    bail!("`{}` is not a dataset label", row.label);
                }
                if labels.insert(row.id.clone(), row.label).is_none() {
                    ids.push(row.id);
                }
            }
            let proxies = train_proxies(&dataset, &ids, &labels, embedder.as_ref(), &sgd)?;
            let positives = dataset
                .labels()
                .iter()
                .map(|l| (l.clone(), labels.values().filter(|v| *v == l).count()))
                .collect();
            let report = TrainProxyReport {
                command: "train-proxy",
                kind: "label",
                embedder: embedder.id().to_string(),
                trained_on: ids.len(),
                positives,
                stub_labels: proxies.stub_labels().iter().map(|s| s.to_string()).collect(),
                out: path_string(&a.out),
            };
            (serde_json::to_string_pretty(&proxies)?, report)
        }
        ProxyKind::Oos => {
            let ann = inputs::oos_annotations(&a.annotations)?;
            let model = train_oos_model(&ann, embedder.as_ref(), a.threshold, &sgd)?;
            let n_oos = ann.iter().filter(|(_, o)| *o).count();
            let report = TrainProxyReport {
                command: "train-proxy",
                kind: "oos",
                embedder: embedder.id().to_string(),
                trained_on: ann.len(),
                positives: [("out_of_scope".to_string(), n_oos), ("in_scope".to_string(), ann.len() - n_oos)]
                    .into_iter()
                    .collect(),
                stub_labels: Vec::new(),
                out: path_string(&a.out),
            };
            (serde_json::to_string_pretty(&model)?, report)
        }
    };
    fs::write(&a.out, json + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    emit(g, &report, started)
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        seed: a.seed,
        snapshot_every: a.snapshot_every,
        w: a.w,
        ..Default::default()
    };
    let service = Service::open(&a.data_dir, config, inputs::embedder(&a.embed))
        .with_context(|| format!("opening data dir {}", a.data_dir.display()))?;
    let options = ApiOptions {
        api_token: a.api_token.filter(|t| !t.is_empty()),
        ui_origin: a.ui_origin.filter(|o| !o.is_empty()),
        ui_dir: a.ui_dir,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        let addr = listener.local_addr()?;
        {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", serde_json::json!({ "listening": format!("http://{addr}") }))?;
            out.flush()?;
        }
        divgen_service::serve(listener, divgen_service::router(Arc::new(service), &options)).await?;
        Ok(())
    })
}

#[derive(Serialize)]
struct BudgetReport {
    command: &'static str,
    #[serde(flatten)]
    estimate: BudgetEstimate,
    per_block_cents: i64,
    cost_cents: i64,
}

pub fn budget(g: &GlobalArgs, a: BudgetArgs) -> Result<()> {
    let started = Instant::now();
    let estimate = match &a.task {
        Some(path) => {
            let mut task = inputs::task(path)?;
            if let Some(n) = a.target {
                task.target_count = n;
            }
            match a.classes {
                Some(c) => estimate_budget_for(task.target_count, c, a.price),
                None => estimate_budget(&task, a.price),
            }
        }
        None => {
            let target = a.target.context("--target is required without --task")?;
            let classes = a.classes.context("--classes is required without --task")?;
            estimate_budget_for(target, classes, a.price)
        }
    };
    emit(
        g,
        &BudgetReport {
            command: "budget",
            per_block_cents: cents(estimate.per_block_cost),
            cost_cents: cents(estimate.cost),
            estimate,
        },
        started,
    )
}

#[derive(Serialize)]
struct InitDemoReport {
    command: &'static str,
    task: String,
    files: Vec<String>,
}

pub fn init_demo(g: &GlobalArgs, a: InitDemoArgs) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(&a.dir)?;
    let spec = demo_spec(a.target);
    let task_path = a.dir.join("task.toml");
    fs::write(&task_path, spec.to_toml())?;
    let corpus_dir: PathBuf = a.dir.join(&spec.mock.as_ref().expect("demo has a mock section").corpus_dir);
    demo_task().write_corpus(&corpus_dir)?;
    let mut files = vec![path_string(&task_path)];
    files.extend(spec.labels.iter().map(|l| path_string(&corpus_dir.join(format!("{l}.txt")))));
    emit(
        g,
        &InitDemoReport {
            command: "init-demo",
            task: path_string(&task_path),
            files,
        },
        started,
    )
}
