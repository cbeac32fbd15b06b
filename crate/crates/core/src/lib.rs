//! Illustrating multi-step manual tasks with coherent image sequences.
//!
//! The pipeline runs per task: filter and window the steps ([`task`]),
//! decode visual captions ([`context`]), plan each step's initial latent
//! ([`planner`]), run reverse diffusion ([`diffusion`]) and assemble the
//! sequence ([`generator`]). [`evaluation`] and [`annotation`] score the
//! results automatically and through human studies.

pub mod adapter;
pub mod annotation;
pub mod context;
pub mod diffusion;
pub mod evaluation;
pub mod generator;
pub mod planner;
pub mod synthetic;
pub mod task;
pub mod text;

pub use context::{Caption, CaptionStyle, ContextMode, DecoderConfig, StubDecoder, TextDecoder};
pub use diffusion::{
    BackendSpec, Conditioning, DiffusionBackend, ImageArtifact, Latent, LatentTrace, ToyBackend,
    ToyConfig, NEGATIVE_PROMPTS,
};
pub use planner::{HashedEmbedder, PlannerConfig, SeedPlan, Strategy, TextEmbedder};
pub use task::{Domain, ManualTask, Step};
