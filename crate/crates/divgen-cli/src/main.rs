use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod inputs;
mod report;

#[derive(Parser)]
#[command(name = "divgen", version, about = "Generate diverse labeled text datasets and curate them")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Report rendering.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Add wall-clock runtimes to reports (breaks byte-identical reruns).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Openai,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    /// Local hashed character n-grams.
    Hashed,
    /// OpenAI-compatible embeddings endpoint.
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistanceKind {
    Cosine,
    Euclidean,
}

#[derive(Args, Clone)]
pub struct EmbedderArgs {
    #[arg(long, value_enum, default_value_t = EmbedderKind::Hashed)]
    pub embedder: EmbedderKind,
    /// Projection seed of the hashed embedder.
    #[arg(long, default_value_t = 0x5eed)]
    pub embed_seed: u64,
    #[arg(long, default_value = "text-embedding-3-small")]
    pub embed_model: String,
    #[arg(long, default_value_t = 1536)]
    pub embed_dim: usize,
}

/// Where ground-truth labels come from.
#[derive(Args, Clone)]
pub struct OracleArgs {
    /// Task file whose `[mock]` keywords act as the oracle.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// JSON lines of `{"text", "label"}` looked up by exact text.
    #[arg(long, conflicts_with = "task")]
    pub oracle_labels: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a task file.
    Generate(GenerateArgs),
    /// Measure diversity, similarity, label accuracy and student accuracy.
    Metrics(MetricsArgs),
    /// Repair a generated dataset.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Train a proxy model from annotations and save it.
    TrainProxy(TrainProxyArgs),
    /// Serve the annotation API over a directory of tasks.
    Serve(ServeArgs),
    /// Estimate the token cost of a task.
    Budget(BudgetArgs),
    /// Write the bundled demo task and its corpus.
    InitDemo(InitDemoArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Overrides the task's temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Overrides the task's logit-suppression switch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub logit_suppression: Option<bool>,
    /// Overrides the task's target count.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Request log path; defaults to `<out stem>.requests.jsonl`.
    #[arg(long)]
    pub request_log: Option<PathBuf>,
    /// Checkpoint file rewritten after every iteration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from `--checkpoint` instead of starting over.
    #[arg(long, requires = "checkpoint")]
    pub resume: bool,
    /// Record start and finish times in the dataset header.
    #[arg(long)]
    pub timestamps: bool,
    /// Model name for the OpenAI-compatible backend.
    #[arg(long, default_value = "davinci-002")]
    pub model: String,
    /// `encoder.json` of the served model's BPE vocabulary.
    #[arg(long, requires = "bpe_merges")]
    pub bpe_encoder: Option<PathBuf>,
    /// `vocab.bpe` merges of the served model.
    #[arg(long, requires = "bpe_encoder")]
    pub bpe_merges: Option<PathBuf>,
    /// Dollars per 1k tokens.
    #[arg(long, default_value_t = 0.02)]
    pub price: f64,
}

#[derive(Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON lines with a `text` field to compare against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Labeled JSON lines; trains a student on the dataset and scores it here.
    #[arg(long)]
    pub student_test: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DistanceKind::Cosine)]
    pub distance: DistanceKind,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Subcommand)]
enum CurateCommand {
    /// Label replacement by an oracle or oracle-trained proxies.
    Lr(CurateLrArgs),
    /// Out-of-scope filtering.
    Oosf(CurateOosfArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LrModeArg {
    Oracle,
    Proxy,
}

#[derive(Args)]
pub struct CurateLrArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = LrModeArg::Oracle)]
    pub mode: LrModeArg,
    /// Instances inspected by the oracle in proxy mode.
    #[arg(long, default_value_t = 180)]
    pub n: usize,
    /// Weight of the specified label.
    #[arg(long, default_value_t = 0.3)]
    pub w: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repeat proxy mode this many times with consecutive seeds and report
    /// the accuracy spread instead of writing a dataset.
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args)]
pub struct CurateOosfArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON lines of `{"text", "out_of_scope"}`.
    #[arg(long, required_unless_present = "model")]
    pub annotations: Option<PathBuf>,
    /// Previously trained model from `train-proxy oos`.
    #[arg(long, conflicts_with = "annotations")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also report held-out accuracy over this many 8:2 splits.
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProxyKind {
    /// One-vs-rest label proxies.
    Label,
    /// Out-of-scope detector.
    Oos,
}

#[derive(Args)]
pub struct TrainProxyArgs {
    #[arg(value_enum, default_value_t = ProxyKind::Label)]
    pub kind: ProxyKind,
    /// Dataset the label annotations refer to.
    #[arg(long, required_if_eq("kind", "label"))]
    pub dataset: Option<PathBuf>,
    /// Label proxies: `{"id", "label"}` lines. OOS: `{"text", "out_of_scope"}` lines.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args)]
pub struct ServeArgs {
    /// One sub-directory per task, each holding `dataset.jsonl`.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Static UI bundle served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Seed of the random review order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub snapshot_every: u64,
    #[arg(long, default_value_t = 0.3)]
    pub w: f64,
    #[arg(long, env = "DIVGEN_API_TOKEN", hide_env_values = true)]
    pub api_token: Option<String>,
    #[arg(long, env = "DIVGEN_UI_ORIGIN")]
    pub ui_origin: Option<String>,
    #[command(flatten)]
    pub embed: EmbedderArgs,
}

#[derive(Args)]
pub struct BudgetArgs {
    #[arg(long, required_unless_present = "target")]
    pub task: Option<PathBuf>,
    /// Instances to generate; overrides the task file.
    #[arg(long)]
    pub target: Option<usize>,
    /// Example classes per prompt; defaults to the task's label count.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Dollars per 1k tokens.
    #[arg(long, default_value_t = 0.02)]
    pub price: f64,
}

#[derive(Args)]
pub struct InitDemoArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub target: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Generate(a) => commands::generate(g, a),
        Command::Metrics(a) => commands::metrics(g, a),
        Command::Curate(CurateCommand::Lr(a)) => commands::curate_lr(g, a),
        Command::Curate(CurateCommand::Oosf(a)) => commands::curate_oosf(g, a),
        Command::TrainProxy(a) => commands::train_proxy(g, a),
        Command::Serve(a) => commands::serve(a),
        Command::Budget(a) => commands::budget(g, a),
        Command::InitDemo(a) => commands::init_demo(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
