//! Visual captions from a step and its context window: captioner prompts,
//! decoder invocation and training-pair export.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, JsonAdapter};
use crate::task::{build_context_window, ContextItem, ContextWindow, ManualTask, TaskError, WindowMode};
use crate::text;

/// Instruction appended to every captioner prompt.
pub const CAPTIONER_SUFFIX: &str = "Given the steps, give a short description of the image. Do NOT make assumptions, say only what you see in the image.";

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("decoder adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error("decoder returned an empty caption for step {step}")]
    EmptyOutput { step: usize },
    #[error(transparent)]
    Window(#[from] TaskError),
    #[error("missing reference captions for steps: {}", .0.join(", "))]
    MissingReference(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionStyle {
    Short,
    Long,
}

impl CaptionStyle {
    /// Number of preceding steps the captioner sees for this style.
    pub fn captioner_window(self) -> usize {
        match self {
            Self::Short => 2,
            Self::Long => 3,
        }
    }
}

impl fmt::Display for CaptionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Short => "short",
            Self::Long => "long",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionProvenance {
    Stub,
    ExternalDecoder,
    ExternalCaptioner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub step_index: usize,
    pub text: String,
    pub style: CaptionStyle,
    pub provenance: CaptionProvenance,
}

/// Which context the decoder sees, as in the three evaluated layouts:
/// `{s_n}`, `{s_n, c_{n-1}}` and `{s_n, s_{n-1}, c_{n-2}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextMode {
    #[serde(rename = "s")]
    S,
    #[serde(rename = "s_c1")]
    SC1,
    #[serde(rename = "s_s1_c2")]
    SS1C2,
}

impl ContextMode {
    pub fn window_width(self) -> usize {
        match self {
            Self::S => 0,
            Self::SC1 => 1,
            Self::SS1C2 => 2,
        }
    }

    pub fn window_mode(self) -> WindowMode {
        match self {
            Self::S => WindowMode::StepsOnly,
            Self::SC1 | Self::SS1C2 => WindowMode::StepsAndCaptions,
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Self::S),
            "s_c1" | "s-c1" => Ok(Self::SC1),
            "s_s1_c2" | "s-s1-c2" => Ok(Self::SS1C2),
            other => Err(format!("unknown context mode `{other}` (expected s, s_c1, s_s1_c2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub context_mode: ContextMode,
    pub caption_style: CaptionStyle,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { context_mode: ContextMode::SC1, caption_style: CaptionStyle::Short }
    }
}

impl DecoderConfig {
    pub fn window_width(&self) -> usize {
        self.context_mode.window_width()
    }

    pub fn window(
        &self,
        task: &ManualTask,
        i: usize,
        captions: &[Caption],
    ) -> Result<ContextWindow, TaskError> {
        build_context_window(task, i, self.window_width(), self.context_mode.window_mode(), captions)
    }
}

/// Captioner prompt: the predecessor texts oldest first, one per line,
/// followed by [`CAPTIONER_SUFFIX`]. The window is expected to have been
/// built with `style.captioner_window()` steps.
pub fn build_captioner_prompt(window: &ContextWindow, _style: CaptionStyle) -> String {
    let mut prompt = String::new();
    for item in window.chronological() {
        prompt.push_str(item.text().trim());
        prompt.push('\n');
    }
    prompt.push_str(CAPTIONER_SUFFIX);
    prompt
}

/// Body of a `/caption` request; `image` is a path or URL the captioner can
/// read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionerRequest {
    pub prompt: String,
    pub image: String,
}

/// Image captioner reached through `{"prompt","image"} -> {"text"}`.
#[derive(Debug, Clone)]
pub struct AdapterCaptioner {
    pub adapter: JsonAdapter,
}

impl AdapterCaptioner {
    pub fn caption(
        &self,
        window: &ContextWindow,
        style: CaptionStyle,
        image: &str,
    ) -> Result<Caption, DecodeError> {
        let req = CaptionerRequest { prompt: build_captioner_prompt(window, style), image: image.to_string() };
        let resp: DecodeResponse = self.adapter.call("/caption", &req)?;
        let text = resp.text.trim();
        if text.is_empty() {
            return Err(DecodeError::EmptyOutput { step: window.target.index });
        }
        Ok(Caption {
            step_index: window.target.index,
            text: text.to_string(),
            style,
            provenance: CaptionProvenance::ExternalCaptioner,
        })
    }
}

/// Decoder prompt for a window: context items oldest first, then the target
/// step. Used both for inference requests and for training pairs.
pub fn serialize_window(window: &ContextWindow, style: CaptionStyle) -> String {
    let mut s = format!("### Instruction:\nWrite a {style} visual caption for the last step.\n\n");
    if !window.predecessors.is_empty() {
        s.push_str("### Context:\n");
        for item in window.chronological() {
            let label = match item {
                ContextItem::Step(_) => "Step",
                ContextItem::Caption(_) => "Caption",
            };
            s.push_str(&format!("{label} {}: {}\n", item.index(), item.text().trim()));
        }
        s.push('\n');
    }
    s.push_str(&format!("### Step {}:\n{}\n\n### Caption:\n", window.target.index, window.target.text.trim()));
    s
}

/// Text generation backend for captions.
pub trait TextDecoder: Send + Sync {
    fn decode(&self, window: &ContextWindow, prompt: &str) -> Result<String, AdapterError>;
    fn provenance(&self) -> CaptionProvenance;
}

/// Offline template decoder: `"image of: "` + the target step, followed by
/// the noun phrases found in the predecessors.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubDecoder;

impl TextDecoder for StubDecoder {
    fn decode(&self, window: &ContextWindow, _prompt: &str) -> Result<String, AdapterError> {
        let mut phrases: Vec<String> = Vec::new();
        for item in window.chronological() {
            for p in text::noun_phrases(item.text()) {
                if !phrases.contains(&p) {
                    phrases.push(p);
                }
            }
        }
        let mut out = format!("image of: {}", window.target.text.trim());
        if !phrases.is_empty() {
            out.push_str(" with ");
            out.push_str(&phrases.join(", "));
        }
        Ok(out)
    }

    fn provenance(&self) -> CaptionProvenance {
        CaptionProvenance::Stub
    }
}

#[derive(Serialize)]
struct DecodeRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct DecodeResponse {
    text: String,
}

/// Decoder reached through the `{"prompt"} -> {"text"}` adapter protocol.
#[derive(Debug, Clone)]
pub struct AdapterDecoder {
    pub adapter: JsonAdapter,
}

impl TextDecoder for AdapterDecoder {
    fn decode(&self, _window: &ContextWindow, prompt: &str) -> Result<String, AdapterError> {
        let resp: DecodeResponse = self.adapter.call("/decode", &DecodeRequest { prompt })?;
        Ok(resp.text)
    }

    fn provenance(&self) -> CaptionProvenance {
        CaptionProvenance::ExternalDecoder
    }
}

pub fn decode_caption(
    window: &ContextWindow,
    config: &DecoderConfig,
    decoder: &dyn TextDecoder,
) -> Result<Caption, DecodeError> {
    let prompt = serialize_window(window, config.caption_style);
    let text = decoder.decode(window, &prompt)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(DecodeError::EmptyOutput { step: window.target.index });
    }
    Ok(Caption {
        step_index: window.target.index,
        text: text.to_string(),
        style: config.caption_style,
        provenance: decoder.provenance(),
    })
}

/// Captions for every step of a task, in step order; later windows may
/// reference earlier captions.
pub fn decode_task(
    task: &ManualTask,
    config: &DecoderConfig,
    decoder: &dyn TextDecoder,
) -> Result<Vec<Caption>, DecodeError> {
    let mut captions = Vec::with_capacity(task.len());
    for i in 1..=task.len() {
        let window = config.window(task, i, &captions)?;
        captions.push(decode_caption(&window, config, decoder)?);
    }
    Ok(captions)
}

/// One line of a caption file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub task_id: String,
    pub step_index: usize,
    pub style: CaptionStyle,
    pub text: String,
}

/// Reference captions keyed by (task id, style), indexed by step.
#[derive(Debug, Clone, Default)]
pub struct CaptionIndex {
    by_task: HashMap<(String, CaptionStyle), Vec<Caption>>,
}

impl CaptionIndex {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a CaptionRecord>) -> Self {
        let mut by_task: HashMap<(String, CaptionStyle), Vec<Caption>> = HashMap::new();
        for r in records {
            by_task.entry((r.task_id.clone(), r.style)).or_default().push(Caption {
                step_index: r.step_index,
                text: r.text.clone(),
                style: r.style,
                provenance: CaptionProvenance::ExternalCaptioner,
            });
        }
        for caps in by_task.values_mut() {
            caps.sort_by_key(|c| c.step_index);
        }
        Self { by_task }
    }

    pub fn captions(&self, task_id: &str, style: CaptionStyle) -> &[Caption] {
        self.by_task.get(&(task_id.to_string(), style)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn get(&self, task_id: &str, style: CaptionStyle, step: usize) -> Option<&Caption> {
        self.captions(task_id, style).iter().find(|c| c.step_index == step)
    }

    /// `task:step` ids of steps with no caption of `style`.
    pub fn missing(&self, tasks: &[ManualTask], style: CaptionStyle) -> Vec<String> {
        tasks
            .iter()
            .flat_map(|t| {
                t.steps
                    .iter()
                    .filter(|s| self.get(&t.id, style, s.index).is_none())
                    .map(move |s| format!("{}:{}", t.id, s.index))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub prompt: String,
    pub target: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub context_mode: ContextMode,
    pub caption_style: CaptionStyle,
}

/// Number of training items for an 80/20 split, rounding down.
pub fn train_count(total: usize) -> usize {
    total * 4 / 5
}

/// One pair per step. The split is an 80/20 partition of a seeded shuffle;
/// pairs keep corpus order.
pub fn emit_training_pairs(
    corpus: &[ManualTask],
    references: &CaptionIndex,
    config: &DecoderConfig,
    seed: u64,
) -> Result<(Vec<TrainingPair>, TrainingManifest), DecodeError> {
    let missing = references.missing(corpus, config.caption_style);
    if !missing.is_empty() {
        return Err(DecodeError::MissingReference(missing));
    }
    let mut pairs = Vec::new();
    for task in corpus {
        let caps = references.captions(&task.id, config.caption_style);
        for step in &task.steps {
            let window = config.window(task, step.index, caps)?;
            let target = references
                .get(&task.id, config.caption_style, step.index)
                .expect("checked above")
                .text
                .clone();
            pairs.push(TrainingPair {
                prompt: serialize_window(&window, config.caption_style),
                target,
                split: Split::Test,
            });
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(pairs.len());
    for &k in &order[..n_train] {
        pairs[k].split = Split::Train;
    }
    let manifest = TrainingManifest {
        seed,
        total: pairs.len(),
        train: n_train,
        test: pairs.len() - n_train,
        context_mode: config.context_mode,
        caption_style: config.caption_style,
    };
    Ok((pairs, manifest))
}

/// Fine-tuning hyperparameters of the reference decoder, kept for adapter
/// users. No trainer lives in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub base_model: String,
    pub epochs: u32,
    pub loss: String,
    pub weight_decay: f64,
    pub model_max_length: u32,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub effective_batch_size: u32,
    pub learning_rate: f64,
    pub lr_scheduler: String,
    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub lora: BTreeMap<String, f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            base_model: "Alpaca-7B".into(),
            epochs: 10,
            loss: "cross-entropy".into(),
            weight_decay: 0.01,
            model_max_length: 400,
            batch_size: 2,
            gradient_accumulation_steps: 4,
            effective_batch_size: 8,
            learning_rate: 1e-5,
            lr_scheduler: "cosine".into(),
            optimizer: "AdamW".into(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            lora: BTreeMap::from([
                ("rank".to_string(), 8.0),
                ("alpha".to_string(), 32.0),
                ("dropout".to_string(), 0.1),
            ]),
        }
    }
}
