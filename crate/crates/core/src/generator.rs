//! Per-task illustration: caption, plan, initialize, diffuse, decode, retain.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{decode_caption, Caption, CaptionIndex, DecodeError, DecoderConfig, TextDecoder};
use crate::diffusion::{
    img2img_init, write_png, DiffusionBackend, DiffusionError, DiffusionRequest, ImageArtifact, Latent,
    LatentTrace, RenderMode,
};
use crate::planner::{plan_seed, PlanError, PlannerConfig, SeedPlan, Strategy, TextEmbedder};
use crate::task::ManualTask;
use crate::text;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("step {step}: {source}")]
    Decode { step: usize, source: DecodeError },
    #[error("step {step}: {source}")]
    Plan { step: usize, source: PlanError },
    #[error("step {step}: {source}")]
    Diffusion { step: usize, source: DiffusionError },
    #[error("step {step}: no retained trace of step {source_step} at iteration {k}")]
    MissingTrace { step: usize, source_step: usize, k: usize },
    #[error("step {step}: precomputed caption missing")]
    MissingCaption { step: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("trace store: {0}")]
    Io(#[from] std::io::Error),
}

impl GenerateError {
    /// True for failures of an external adapter (decoder, embedder, engine).
    pub fn is_adapter_failure(&self) -> bool {
        matches!(
            self,
            Self::Decode { source: DecodeError::Adapter(_), .. }
                | Self::Plan { source: PlanError::Similarity(_), .. }
                | Self::Diffusion { source: DiffusionError::Adapter(_), .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RetentionPolicy {
    Full,
    LastMSteps { m: usize },
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<(), GenerateError> {
        match self {
            Self::LastMSteps { m: 0 } => Err(GenerateError::Config("last_m_steps needs m >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Whether step `kept` survives once step `current` has been stored.
    pub fn keeps(&self, kept: usize, current: usize) -> bool {
        match *self {
            Self::Full => true,
            Self::LastMSteps { m } => kept + m > current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TraceRef {
    pub task_id: String,
    pub step_index: usize,
    pub digest: String,
}

impl fmt::Display for TraceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/step_{}@{}", self.task_id, self.step_index, &self.digest[..12.min(self.digest.len())])
    }
}

/// Storage for latent traces; implementations must accept concurrent
/// writers for distinct tasks.
pub trait TraceStore: Send + Sync {
    fn put(&self, task_id: &str, trace: &LatentTrace) -> std::io::Result<TraceRef>;
    fn get(&self, task_id: &str, step_index: usize) -> std::io::Result<Option<LatentTrace>>;
    fn evict(&self, task_id: &str, step_index: usize) -> std::io::Result<()>;
    fn steps(&self, task_id: &str) -> std::io::Result<Vec<usize>>;
}

fn trace_ref(task_id: &str, trace: &LatentTrace) -> TraceRef {
    TraceRef { task_id: task_id.to_string(), step_index: trace.step_index, digest: trace.digest() }
}

#[derive(Debug, Default)]
pub struct MemoryTraceStore {
    traces: Mutex<BTreeMap<(String, usize), LatentTrace>>,
}

impl TraceStore for MemoryTraceStore {
    fn put(&self, task_id: &str, trace: &LatentTrace) -> std::io::Result<TraceRef> {
        self.traces.lock().unwrap().insert((task_id.to_string(), trace.step_index), trace.clone());
        Ok(trace_ref(task_id, trace))
    }

    fn get(&self, task_id: &str, step_index: usize) -> std::io::Result<Option<LatentTrace>> {
        Ok(self.traces.lock().unwrap().get(&(task_id.to_string(), step_index)).cloned())
    }

    fn evict(&self, task_id: &str, step_index: usize) -> std::io::Result<()> {
        self.traces.lock().unwrap().remove(&(task_id.to_string(), step_index));
        Ok(())
    }

    fn steps(&self, task_id: &str) -> std::io::Result<Vec<usize>> {
        Ok(self.traces.lock().unwrap().keys().filter(|(t, _)| t == task_id).map(|(_, s)| *s).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    step_index: usize,
    total_iterations: usize,
    latent_dim: usize,
    conditioning_digest: String,
    iterations: Vec<Latent>,
}

/// One JSON file per trace at `<root>/<task_id>/traces/step_<i>.json`.
#[derive(Debug, Clone)]
pub struct DirTraceStore {
    pub root: PathBuf,
}

impl DirTraceStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn dir(&self, task_id: &str) -> PathBuf {
        self.root.join(task_id).join("traces")
    }

    fn path(&self, task_id: &str, step: usize) -> PathBuf {
        self.dir(task_id).join(format!("step_{step}.json"))
    }
}

impl TraceStore for DirTraceStore {
    fn put(&self, task_id: &str, trace: &LatentTrace) -> std::io::Result<TraceRef> {
        fs::create_dir_all(self.dir(task_id))?;
        let file = TraceFile {
            step_index: trace.step_index,
            total_iterations: trace.total_iterations,
            latent_dim: trace.initial().dim(),
            conditioning_digest: trace.conditioning_digest.clone(),
            iterations: trace.iterations.clone(),
        };
        write_atomic(&self.path(task_id, trace.step_index), &serde_json::to_vec(&file)?)?;
        Ok(trace_ref(task_id, trace))
    }

    fn get(&self, task_id: &str, step_index: usize) -> std::io::Result<Option<LatentTrace>> {
        let bytes = match fs::read(self.path(task_id, step_index)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let f: TraceFile = serde_json::from_slice(&bytes)?;
        Ok(Some(LatentTrace {
            step_index: f.step_index,
            total_iterations: f.total_iterations,
            conditioning_digest: f.conditioning_digest,
            iterations: f.iterations,
            encoded_image: None,
        }))
    }

    fn evict(&self, task_id: &str, step_index: usize) -> std::io::Result<()> {
        match fs::remove_file(self.path(task_id, step_index)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    fn steps(&self, task_id: &str) -> std::io::Result<Vec<usize>> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(self.dir(task_id)) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e),
        };
        for entry in entries {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix("step_").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(n) = n.parse() {
                    out.push(n);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "tmp{}",
        std::process::id() as u64 ^ text::fnv1a(path.to_string_lossy().as_bytes())
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Stores a complete trace and evicts whatever the policy no longer keeps.
pub fn retain_trace(
    task_id: &str,
    trace: &LatentTrace,
    policy: &RetentionPolicy,
    store: &dyn TraceStore,
) -> Result<TraceRef, GenerateError> {
    policy.validate()?;
    trace
        .validate()
        .map_err(|source| GenerateError::Diffusion { step: trace.step_index, source })?;
    let r = store.put(task_id, trace)?;
    for step in store.steps(task_id)? {
        if step < trace.step_index && !policy.keeps(step, trace.step_index) {
            store.evict(task_id, step)?;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningSource {
    /// The decoded caption.
    Caption,
    /// The raw step text, for ablations.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// `shared_seed` is replaced per task by a seed derived from `master_seed`.
    pub planner: PlannerConfig,
    pub decoder: DecoderConfig,
    pub retention: RetentionPolicy,
    pub conditioning: ConditioningSource,
    pub master_seed: u64,
}

impl GeneratorConfig {
    /// Adaptive strategy with default planner and decoder settings.
    pub fn new(strategy: Strategy, total_iterations: usize, master_seed: u64) -> Self {
        Self {
            planner: PlannerConfig::new(strategy, total_iterations, 0),
            decoder: DecoderConfig::default(),
            retention: RetentionPolicy::Full,
            conditioning: ConditioningSource::Caption,
            master_seed,
        }
    }

    pub fn task_seed(&self, task_id: &str) -> u64 {
        text::derive_seed(self.master_seed, &["task", task_id])
    }

    pub fn planner_for(&self, task_id: &str) -> PlannerConfig {
        PlannerConfig { shared_seed: self.task_seed(task_id), ..self.planner }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub strategy: Strategy,
    pub eta: f64,
    pub n_max: usize,
    pub fixed_k: usize,
    pub img2img_strength: f64,
    pub window: usize,
    pub decoder: DecoderConfig,
    pub conditioning: ConditioningSource,
    pub retention: RetentionPolicy,
    pub backend_id: String,
    pub latent_dim: usize,
    pub total_iterations: usize,
    pub master_seed: u64,
    pub task_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub caption: Caption,
    pub plan: SeedPlan,
    pub trace_ref: TraceRef,
    pub image: ImageArtifact,
    #[serde(skip)]
    pub encoded_image: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSequence {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub config: ConfigSnapshot,
}

impl GeneratedSequence {
    pub fn images(&self) -> Vec<&ImageArtifact> {
        self.steps.iter().map(|r| &r.image).collect()
    }
}

/// The adapters a generation run talks to.
#[derive(Clone, Copy)]
pub struct Illustrator<'a> {
    pub decoder: &'a dyn TextDecoder,
    pub embedder: &'a dyn TextEmbedder,
    pub backend: &'a dyn DiffusionBackend,
    pub store: &'a dyn TraceStore,
    /// Captions to use instead of running the decoder.
    pub captions: Option<&'a CaptionIndex>,
}

pub fn illustrate_task(
    task: &ManualTask,
    config: &GeneratorConfig,
    ctx: &Illustrator<'_>,
) -> Result<GeneratedSequence, GenerateError> {
    config.retention.validate()?;
    let spec = ctx.backend.spec();
    let planner = config.planner_for(&task.id);
    planner.validate().map_err(|source| GenerateError::Plan { step: 0, source })?;
    let iterations = spec.total_iterations;
    let noise_seed = text::derive_seed(planner.shared_seed, &["noise"]);

    let mut captions: Vec<Caption> = Vec::with_capacity(task.len());
    let mut plans: Vec<SeedPlan> = Vec::with_capacity(task.len());
    let mut records: Vec<StepRecord> = Vec::with_capacity(task.len());

    for i in 1..=task.len() {
        let caption = match ctx.captions {
            Some(index) => index
                .get(&task.id, config.decoder.caption_style, i)
                .cloned()
                .ok_or(GenerateError::MissingCaption { step: i })?,
            None => {
                let window = config
                    .decoder
                    .window(task, i, &captions)
                    .map_err(|e| GenerateError::Decode { step: i, source: DecodeError::Window(e) })?;
                decode_caption(&window, &config.decoder, ctx.decoder)
                    .map_err(|source| GenerateError::Decode { step: i, source })?
            }
        };
        captions.push(caption.clone());

        let plan = plan_seed(task, i, &planner, &plans, ctx.embedder)
            .map_err(|source| GenerateError::Plan { step: i, source })?;

        let diffusion = |source| GenerateError::Diffusion { step: i, source };
        let init = match (plan.strategy, plan.source_step, plan.iteration_k) {
            (_, Some(j), Some(k)) => {
                let missing = GenerateError::MissingTrace { step: i, source_step: j, k };
                let trace = ctx.store.get(&task.id, j)?.ok_or(missing)?;
                trace.at(k).cloned().ok_or(GenerateError::MissingTrace { step: i, source_step: j, k })?
            }
            (Strategy::Img2Img, Some(j), None) => {
                let prev = &records[j - 1].image;
                let seed = plan.seed.expect("img2img plans carry a noise seed");
                img2img_init(ctx.backend, prev, planner.img2img_strength, seed).map_err(diffusion)?
            }
            _ => ctx.backend.noise_latent(plan.seed.expect("non-copy plans carry a seed")),
        };

        let prompt = match config.conditioning {
            ConditioningSource::Caption => caption.text.as_str(),
            ConditioningSource::Step => task.steps[i - 1].text.as_str(),
        };
        let conditioning = ctx.backend.embed_text(prompt).map_err(diffusion)?;
        let mut trace = ctx
            .backend
            .reverse_diffuse(&DiffusionRequest {
                step_index: i,
                init: &init,
                conditioning: &conditioning,
                iterations,
                noise_seed,
            })
            .map_err(diffusion)?;
        let encoded_image = trace.encoded_image.take();
        let image = ctx
            .backend
            .decode_latent(trace.final_latent(), i, RenderMode::Identity)
            .map_err(diffusion)?;
        let trace_ref = retain_trace(&task.id, &trace, &config.retention, ctx.store)?;

        plans.push(plan.clone());
        records.push(StepRecord { step_index: i, caption, plan, trace_ref, image, encoded_image });
    }

    Ok(GeneratedSequence {
        task_id: task.id.clone(),
        steps: records,
        config: ConfigSnapshot {
            strategy: planner.strategy,
            eta: planner.eta,
            n_max: planner.n_max,
            fixed_k: planner.fixed_k,
            img2img_strength: planner.img2img_strength,
            window: config.decoder.window_width(),
            decoder: config.decoder,
            conditioning: config.conditioning,
            retention: config.retention,
            backend_id: spec.backend_id.clone(),
            latent_dim: spec.latent_dim,
            total_iterations: iterations,
            master_seed: config.master_seed,
            task_seed: planner.shared_seed,
        },
    })
}

pub const PNG_UPSCALE: u32 = 16;

/// Writes `<dir>/<task_id>/` with step images, `plan.jsonl`,
/// `captions.jsonl`, `config.json` and `sequence.json`. Traces are written by
/// the store.
pub fn write_sequence(
    dir: &Path,
    seq: &GeneratedSequence,
    backend: &dyn DiffusionBackend,
) -> Result<PathBuf, GenerateError> {
    let out = dir.join(&seq.task_id);
    fs::create_dir_all(&out)?;
    let mut plan_lines = String::new();
    let mut caption_lines = String::new();
    for r in &seq.steps {
        plan_lines.push_str(&serde_json::to_string(&r.plan.log_record()).map_err(std::io::Error::from)?);
        plan_lines.push('\n');
        caption_lines.push_str(&serde_json::to_string(&r.caption).map_err(std::io::Error::from)?);
        caption_lines.push('\n');
        let png_path = out.join(format!("step_{}.png", r.step_index));
        match &r.encoded_image {
            Some(bytes) => write_atomic(&png_path, bytes)?,
            None => {
                let z = backend
                    .encode_image(&r.image)
                    .map_err(|source| GenerateError::Diffusion { step: r.step_index, source })?;
                let rgb = backend
                    .decode_latent(&z, r.step_index, RenderMode::Rgb)
                    .map_err(|source| GenerateError::Diffusion { step: r.step_index, source })?;
                // Engines without a viewable renderer only get the JSON record.
                if matches!(rgb.payload, crate::diffusion::ImagePayload::Rgb { .. }) {
                    write_png(&rgb, &png_path, PNG_UPSCALE)
                        .map_err(|source| GenerateError::Diffusion { step: r.step_index, source })?;
                }
            }
        }
    }
    write_atomic(&out.join("plan.jsonl"), plan_lines.as_bytes())?;
    write_atomic(&out.join("captions.jsonl"), caption_lines.as_bytes())?;
    write_atomic(&out.join("config.json"), &pretty(&seq.config)?)?;
    write_atomic(&out.join("sequence.json"), &pretty(seq)?)?;
    Ok(out)
}

fn pretty<T: Serialize>(v: &T) -> std::io::Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

pub fn read_sequence(task_dir: &Path) -> std::io::Result<GeneratedSequence> {
    Ok(serde_json::from_slice(&fs::read(task_dir.join("sequence.json"))?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub task_id: String,
    pub status: TaskStatus,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config: GeneratorConfig,
    pub backend_id: String,
    pub tasks: Vec<BatchEntry>,
}

impl BatchManifest {
    pub fn failures(&self) -> usize {
        self.tasks.iter().filter(|t| t.status == TaskStatus::Failed).count()
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("manifest.json"), &pretty(self)?)
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?)
    }
}

pub fn batch_entry(task: &ManualTask, result: &Result<GeneratedSequence, GenerateError>) -> BatchEntry {
    match result {
        Ok(seq) => BatchEntry { task_id: task.id.clone(), status: TaskStatus::Ok, steps: seq.steps.len(), error: None },
        Err(e) => BatchEntry {
            task_id: task.id.clone(),
            status: TaskStatus::Failed,
            steps: task.len(),
            error: Some(e.to_string()),
        },
    }
}
