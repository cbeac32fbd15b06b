//! Per-step choice of the initial latent for reverse diffusion.
//!
//! The adaptive strategy looks for the most similar earlier step and, when
//! the similarity clears the threshold `eta`, copies that step's latent after
//! `k` completed denoising iterations, with `k` interpolated linearly between
//! 0 at `sim = eta` and `n_max` at `sim = 1`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, JsonAdapter};
use crate::task::{ManualTask, Step};
use crate::text;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("similarity embedder failed: {0}")]
    Similarity(#[from] AdapterError),
    #[error("embedder returned {got} vectors for {expected} texts")]
    EmbedderShape { expected: usize, got: usize },
    #[error("step index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("planning step {step} needs plans for steps 1..{step}, got {got}")]
    History { step: usize, got: usize },
}

/// Text embedding used for step-to-step similarity.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, AdapterError>;
}

/// Hashed bag-of-words over [`text::HASHED_DIM`] buckets, unit-normalized.
/// Token-free text maps to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: text::HASHED_DIM }
    }
}

impl TextEmbedder for HashedEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, AdapterError> {
        Ok(texts
            .iter()
            .map(|t| text::unit_hashed(t, self.dim).unwrap_or_else(|| vec![0.0; self.dim]))
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedder behind the `{"texts"} -> {"vectors"}` adapter protocol.
#[derive(Debug, Clone)]
pub struct AdapterEmbedder {
    pub adapter: JsonAdapter,
}

impl TextEmbedder for AdapterEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, AdapterError> {
        let resp: EmbedResponse = self.adapter.call("/embed", &EmbedRequest { texts })?;
        Ok(resp.vectors)
    }
}

fn embed_checked(embedder: &dyn TextEmbedder, texts: &[&str]) -> Result<Vec<Vec<f64>>, PlanError> {
    let v = embedder.embed(texts)?;
    if v.len() != texts.len() {
        return Err(PlanError::EmbedderShape { expected: texts.len(), got: v.len() });
    }
    Ok(v)
}

/// Cosine similarity of the two embeddings, clamped to `[0, 1]`.
pub fn text_similarity(a: &str, b: &str, embedder: &dyn TextEmbedder) -> Result<f64, PlanError> {
    let v = embed_checked(embedder, &[a, b])?;
    Ok(text::cosine(&v[0], &v[1]).clamp(0.0, 1.0))
}

/// Most similar earlier step `j < i` and its similarity, or `None` when
/// `i == 1` or the best similarity is below `eta`. Ties go to the most recent
/// step.
pub fn select_source_step(
    steps: &[Step],
    i: usize,
    eta: f64,
    embedder: &dyn TextEmbedder,
) -> Result<Option<(usize, f64)>, PlanError> {
    if i == 0 || i > steps.len() {
        return Err(PlanError::IndexOutOfRange { index: i, len: steps.len() });
    }
    if i == 1 {
        return Ok(None);
    }
    let texts: Vec<&str> = steps[..i].iter().map(|s| s.text.as_str()).collect();
    let vecs = embed_checked(embedder, &texts)?;
    let target = &vecs[i - 1];
    let mut best: Option<(usize, f64)> = None;
    for j in 1..i {
        let sim = text::cosine(target, &vecs[j - 1]).clamp(0.0, 1.0);
        if best.is_none_or(|(_, b)| sim >= b) {
            best = Some((j, sim));
        }
    }
    Ok(best.filter(|&(_, sim)| sim >= eta))
}

// Absorbs representation error so that e.g. sim = 0.6, eta = 0.5, n = 50
// lands on 10 rather than 9.999...
const K_EPSILON: f64 = 1e-9;

/// `floor(n * (sim - eta) / (1 - eta))`, clamped to `[0, n]`.
pub fn compute_latent_iteration(sim: f64, eta: f64, n_max: usize) -> Result<usize, PlanError> {
    if !eta.is_finite() || eta >= 1.0 {
        return Err(PlanError::Config(format!("eta must be below 1.0, got {eta}")));
    }
    let raw = n_max as f64 * (sim - eta) / (1.0 - eta);
    if raw.is_nan() {
        return Err(PlanError::Config(format!("similarity {sim} is not a number")));
    }
    Ok(((raw + K_EPSILON).floor().max(0.0) as usize).min(n_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// A fresh seed for every step.
    Random,
    /// One shared seed for all steps of a task.
    Fixed,
    /// Previous step's latent at a fixed iteration (`Latent T-k`).
    LatentFixed,
    /// Previous step's final image, partially re-noised.
    Img2Img,
    /// Similarity-gated copy with interpolated iteration.
    Adaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Self::Random, Self::Fixed, Self::LatentFixed, Self::Img2Img, Self::Adaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Fixed => "fixed",
            Self::LatentFixed => "latent_fixed",
            Self::Img2Img => "img2img",
            Self::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub strategy: Strategy,
    pub eta: f64,
    /// Largest latent iteration the adaptive strategy may select.
    pub n_max: usize,
    /// Iteration copied by [`Strategy::LatentFixed`].
    pub fixed_k: usize,
    pub shared_seed: u64,
    pub img2img_strength: f64,
}

impl PlannerConfig {
    /// Defaults for a backend running `total_iterations` denoising steps.
    pub fn new(strategy: Strategy, total_iterations: usize, shared_seed: u64) -> Self {
        Self {
            strategy,
            eta: 0.5,
            n_max: total_iterations.saturating_sub(1),
            fixed_k: 1,
            shared_seed,
            img2img_strength: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(PlanError::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.fixed_k > self.n_max {
            return Err(PlanError::Config(format!(
                "fixed_k ({}) exceeds n_max ({})",
                self.fixed_k, self.n_max
            )));
        }
        if !(0.0..=1.0).contains(&self.img2img_strength) {
            return Err(PlanError::Config(format!(
                "img2img strength must lie in [0, 1], got {}",
                self.img2img_strength
            )));
        }
        Ok(())
    }

    /// Fresh seed used by [`Strategy::Random`] for step `i`.
    pub fn step_seed(&self, i: usize) -> u64 {
        text::derive_seed(self.shared_seed, &["random", &i.to_string()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub step_index: usize,
    pub strategy: Strategy,
    pub source_step: Option<usize>,
    pub similarity: Option<f64>,
    pub iteration_k: Option<usize>,
    pub fallback_used: bool,
    /// RNG seed of the initial (or, for img2img, blending) noise. Absent when
    /// the initial latent is copied from a trace.
    pub seed: Option<u64>,
}

impl SeedPlan {
    fn shared(step_index: usize, strategy: Strategy, seed: u64, fallback_used: bool) -> Self {
        Self {
            step_index,
            strategy,
            source_step: None,
            similarity: None,
            iteration_k: None,
            fallback_used,
            seed: Some(seed),
        }
    }

    /// True when the initial latent is read from an earlier step's trace.
    pub fn copies_latent(&self) -> bool {
        self.iteration_k.is_some() && self.source_step.is_some()
    }

    pub fn log_record(&self) -> PlanLogRecord {
        PlanLogRecord {
            step: self.step_index,
            strategy: self.strategy,
            j: self.source_step,
            sim: self.similarity,
            k: self.iteration_k,
            fallback: self.fallback_used,
        }
    }
}

/// One line of `plan.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLogRecord {
    pub step: usize,
    pub strategy: Strategy,
    pub j: Option<usize>,
    pub sim: Option<f64>,
    pub k: Option<usize>,
    pub fallback: bool,
}

/// Plans step `i` given the plans of steps `1..i`.
pub fn plan_seed(
    task: &ManualTask,
    i: usize,
    config: &PlannerConfig,
    history: &[SeedPlan],
    embedder: &dyn TextEmbedder,
) -> Result<SeedPlan, PlanError> {
    config.validate()?;
    if i == 0 || i > task.len() {
        return Err(PlanError::IndexOutOfRange { index: i, len: task.len() });
    }
    if history.len() != i - 1 || history.iter().enumerate().any(|(k, p)| p.step_index != k + 1) {
        return Err(PlanError::History { step: i, got: history.len() });
    }
    let shared = config.shared_seed;
    let plan = match config.strategy {
        Strategy::Fixed => SeedPlan::shared(i, Strategy::Fixed, shared, false),
        Strategy::Random => SeedPlan::shared(i, Strategy::Random, config.step_seed(i), false),
        Strategy::LatentFixed if i == 1 => SeedPlan::shared(i, Strategy::LatentFixed, shared, true),
        Strategy::LatentFixed => SeedPlan {
            step_index: i,
            strategy: Strategy::LatentFixed,
            source_step: Some(i - 1),
            similarity: None,
            iteration_k: Some(config.fixed_k),
            fallback_used: false,
            seed: None,
        },
        Strategy::Img2Img if i == 1 => SeedPlan::shared(i, Strategy::Img2Img, shared, true),
        Strategy::Img2Img => SeedPlan {
            step_index: i,
            strategy: Strategy::Img2Img,
            source_step: Some(i - 1),
            similarity: None,
            iteration_k: None,
            fallback_used: false,
            seed: Some(shared),
        },
        Strategy::Adaptive => match select_source_step(&task.steps, i, config.eta, embedder)? {
            Some((j, sim)) => SeedPlan {
                step_index: i,
                strategy: Strategy::Adaptive,
                source_step: Some(j),
                similarity: Some(sim),
                iteration_k: Some(compute_latent_iteration(sim, config.eta, config.n_max)?),
                fallback_used: false,
                seed: None,
            },
            None => SeedPlan::shared(i, Strategy::Adaptive, shared, true),
        },
    };
    Ok(plan)
}

/// Plans every step of a task in order.
pub fn plan_task(
    task: &ManualTask,
    config: &PlannerConfig,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<SeedPlan>, PlanError> {
    let mut plans = Vec::with_capacity(task.len());
    for i in 1..=task.len() {
        let p = plan_seed(task, i, config, &plans, embedder)?;
        plans.push(p);
    }
    Ok(plans)
}
