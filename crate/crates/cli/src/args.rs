use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stepvis::context::{CaptionStyle, ContextMode};
use stepvis::evaluation::AnnotationTaskType;
use stepvis::planner::Strategy;

#[derive(Debug, Parser)]
#[command(name = "stepvis", version, about = "Illustrate multi-step manual tasks with coherent image sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and filter a task corpus, writing the surviving tasks and an exclusion report.
    Ingest(IngestArgs),
    /// Emit captioner prompts for every step, or call a captioner adapter with them.
    CaptionPrep(CaptionPrepArgs),
    /// Load reference captions and export decoder training pairs.
    CaptionIngest(CaptionIngestArgs),
    /// Produce visual captions with the decoder adapter or the offline stub.
    DecodeCaptions(DecodeCaptionsArgs),
    /// Illustrate every task of a corpus.
    Generate(GenerateArgs),
    /// Compute alignment and coherence metrics over a generated batch.
    Evaluate(EvaluateArgs),
    /// Run one batch per value of the latent iteration k or the threshold eta.
    Sweep(SweepArgs),
    /// Build an annotation job set from generated batches.
    AnnotateJobs(AnnotateJobsArgs),
    /// Serve annotation jobs over HTTP.
    AnnotateServe(ServeArgs),
    /// Summarize annotation records into result tables.
    Aggregate(AggregateArgs),
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_style(s: &str) -> Result<CaptionStyle, String> {
    match s {
        "short" => Ok(CaptionStyle::Short),
        "long" => Ok(CaptionStyle::Long),
        other => Err(format!("unknown caption style `{other}` (expected short or long)")),
    }
}

fn parse_context_mode(s: &str) -> Result<ContextMode, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Stub,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hashed,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Toy,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Caption,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Step,
    Caption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Rank,
    Pairwise,
    Likert,
    Errors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    RankBest3,
    Pairwise,
    Likert,
}

impl From<JobKind> for AnnotationTaskType {
    fn from(k: JobKind) -> Self {
        match k {
            JobKind::RankBest3 => Self::RankBest3,
            JobKind::Pairwise => Self::Pairwise,
            JobKind::Likert => Self::Likert,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecoderArgs {
    #[arg(long, value_enum, default_value_t = DecoderKind::Stub)]
    pub decoder: DecoderKind,
    /// HTTP base URL of the decoder adapter.
    #[arg(long, env = "STEPVIS_DECODER_URL")]
    pub decoder_url: Option<String>,
    /// Command line of a subprocess decoder adapter.
    #[arg(long, env = "STEPVIS_DECODER_CMD")]
    pub decoder_cmd: Option<String>,
    /// Items in the decoder window, target included: 1 = {s_n}, 2 = {s_n, c_n-1},
    /// 3 = {s_n, s_n-1, c_n-2}.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub window: u8,
    /// Explicit context layout (s, s_c1, s_s1_c2); overrides --window.
    #[arg(long, value_parser = parse_context_mode)]
    pub context_mode: Option<ContextMode>,
    #[arg(long, default_value = "short", value_parser = parse_style)]
    pub style: CaptionStyle,
    /// Seconds before an adapter call is abandoned.
    #[arg(long, default_value_t = 60)]
    pub adapter_timeout: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedderArgs {
    #[arg(long, value_enum, default_value_t = EmbedderKind::Hashed)]
    pub embedder: EmbedderKind,
    #[arg(long, env = "STEPVIS_EMBEDDER_URL")]
    pub embedder_url: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = EngineKind::Toy)]
    pub backend: EngineKind,
    /// URL or command line of the diffusion engine adapter.
    #[arg(long, env = "STEPVIS_BACKEND_URL")]
    pub backend_url: Option<String>,
    /// Denoising iterations T.
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    /// Toy contraction rate.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Timestep the engine adapter should resume from for copied latents.
    #[arg(long)]
    pub start_timestep: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long, default_value = "adaptive", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Similarity threshold below which the shared seed is used.
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    /// Largest copied iteration; defaults to T-1.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Iteration copied by the latent_fixed strategy.
    #[arg(long, default_value_t = 1)]
    pub fixed_k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub img2img_strength: f64,
    /// Master seed; per-task seeds derive from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `full` or `last:M`.
    #[arg(long, default_value = "full")]
    pub retention: String,
    #[arg(long, value_enum, default_value_t = Conditioning::Caption)]
    pub conditioning: Conditioning,
    /// Precomputed captions (JSONL) used instead of the decoder.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Tasks generated in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["corpus", "synthetic"])))]
pub struct IngestArgs {
    /// Task file, directory of task files, JSONL of tasks, or manifest of paths.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Generate this many synthetic recipe tasks instead of reading a corpus.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub min_steps: usize,
    #[arg(long, default_value_t = 6)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 77)]
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CaptionPrepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "short", value_parser = parse_style)]
    pub style: CaptionStyle,
    #[arg(long)]
    pub out: PathBuf,
    /// Send each prompt with the step's ground-truth image to the captioner
    /// and write captions instead of prompts.
    #[arg(long)]
    pub call: bool,
    #[arg(long, env = "STEPVIS_CAPTIONER_URL")]
    pub captioner_url: Option<String>,
    #[arg(long, default_value_t = 60)]
    pub adapter_timeout: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CaptionIngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub window: u8,
    #[arg(long, value_parser = parse_context_mode)]
    pub context_mode: Option<ContextMode>,
    #[arg(long, default_value = "short", value_parser = parse_style)]
    pub style: CaptionStyle,
    /// Seed of the train/test shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeCaptionsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricArgs {
    /// Text scored against each image.
    #[arg(long, value_enum, default_value_t = TextSource::Step)]
    pub text: TextSource,
    #[arg(long, value_enum, default_value_t = EngineKind::Toy)]
    pub scorer: EngineKind,
    #[arg(long, env = "STEPVIS_SCORER_URL")]
    pub scorer_url: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineKind::Toy)]
    pub metric: EngineKind,
    #[arg(long, env = "STEPVIS_METRIC_URL")]
    pub metric_url: Option<String>,
    #[arg(long, default_value_t = stepvis::evaluation::DEFAULT_ALIGNMENT_SCALE)]
    pub scale: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Output directory of a `generate` run.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Summary CSV; defaults to `<runs>/summary.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub adapter_timeout: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[command(flatten)]
    pub generate: GenerateArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnnotateJobsArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub job_set: String,
    #[arg(long = "type", value_enum)]
    pub task_type: JobKind,
    /// `METHOD=DIR` for each generated batch; repeat per method.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    /// Step texts shown to annotators; captions are shown when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory of the annotation UI build, served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregateArgs {
    /// Annotation records (JSONL), or one error label per line for `--type errors`.
    pub input: PathBuf,
    #[arg(long = "type", value_enum)]
    pub table: TableKind,
    /// Method whose wins are counted first in pairwise tables; defaults to the
    /// alphabetically smallest method in the records.
    #[arg(long)]
    pub method_a: Option<String>,
    #[arg(long)]
    pub job_set: Option<String>,
    /// Number of evaluated steps for `--type errors`.
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}
