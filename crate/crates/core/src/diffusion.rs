//! Reverse-diffusion engine contract, a deterministic toy engine, and the
//! out-of-process adapter protocol for real latent-diffusion engines.
//!
//! Latents in a [`LatentTrace`] are indexed by the number of completed
//! denoising iterations: entry `0` is the initial seed `z_T`, entry `T` the
//! final latent `z_0`. In `z_t` notation, `z_t = iterations[T - t]`.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, JsonAdapter};
use crate::text;

/// Negative prompt sent with every generation request.
pub const NEGATIVE_PROMPTS: [&str; 12] = [
    "hands",
    "human",
    "person",
    "cropped",
    "deformed",
    "cut off",
    "malformed",
    "out of frame",
    "split image",
    "tiling",
    "watermark",
    "text",
];

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("diffusion adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(pub Vec<f64>);

impl Latent {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &Latent) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &Latent, t: f64) -> Latent {
        Latent(self.0.iter().zip(&other.0).map(|(a, b)| (1.0 - t) * a + t * b).collect())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

/// Per-iteration noise scale `sigma_m`, `m = 1..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    None,
    Constant { sigma: f64 },
    /// Linear from `start` at the first iteration to `end` at the last.
    Linear { start: f64, end: f64 },
}

impl NoiseSchedule {
    pub fn sigma(&self, m: usize, total: usize) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Constant { sigma } => sigma,
            Self::Linear { start, end } => {
                if total <= 1 {
                    start
                } else {
                    start + (end - start) * (m - 1) as f64 / (total - 1) as f64
                }
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match *self {
            Self::None => true,
            Self::Constant { sigma } => sigma == 0.0,
            Self::Linear { start, end } => start == 0.0 && end == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    pub latent_dim: usize,
    pub total_iterations: usize,
    pub deterministic: bool,
    pub schedule: NoiseSchedule,
}

/// Encoded conditioning input `tau(y)` plus the prompt it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub prompt: String,
    pub negative_prompt: Vec<String>,
    /// Empty for engines that encode the prompt themselves.
    pub vector: Vec<f64>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrace {
    pub step_index: usize,
    pub total_iterations: usize,
    pub conditioning_digest: String,
    pub iterations: Vec<Latent>,
    /// Encoded image returned by an external engine, if any.
    #[serde(skip)]
    pub encoded_image: Option<Vec<u8>>,
}

impl LatentTrace {
    /// Latent after `k` completed iterations.
    pub fn at(&self, k: usize) -> Option<&Latent> {
        self.iterations.get(k)
    }

    pub fn initial(&self) -> &Latent {
        &self.iterations[0]
    }

    pub fn final_latent(&self) -> &Latent {
        self.iterations.last().expect("trace is never empty")
    }

    /// `z_t` in noise-level notation.
    pub fn z_t(&self, t: usize) -> Option<&Latent> {
        self.total_iterations.checked_sub(t).and_then(|k| self.at(k))
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.iterations.len() != self.total_iterations + 1 {
            return Err(DiffusionError::Contract(format!(
                "trace has {} latents, expected {}",
                self.iterations.len(),
                self.total_iterations + 1
            )));
        }
        let dim = self.iterations[0].dim();
        if self.iterations.iter().any(|z| z.dim() != dim) {
            return Err(DiffusionError::Contract("trace latents differ in dimensionality".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut bytes = format!("{}:{}:{}:", self.step_index, self.total_iterations, self.conditioning_digest)
            .into_bytes();
        for z in &self.iterations {
            bytes.extend(z.to_le_bytes());
        }
        text::digest_hex(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImagePayload {
    Latent { values: Vec<f64> },
    Rgb { width: u32, height: u32, data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageArtifact {
    pub step_index: usize,
    pub payload: ImagePayload,
    pub renderer_id: String,
}

impl ImageArtifact {
    pub fn latent_values(&self) -> Option<&[f64]> {
        match &self.payload {
            ImagePayload::Latent { values } => Some(values),
            ImagePayload::Rgb { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Payload is the latent itself; used for metrics.
    Identity,
    /// Small RGB grid for viewing.
    Rgb,
}

pub struct DiffusionRequest<'a> {
    pub step_index: usize,
    pub init: &'a Latent,
    pub conditioning: &'a Conditioning,
    pub iterations: usize,
    /// Seeds the per-iteration noise of stochastic schedules.
    pub noise_seed: u64,
}

pub trait DiffusionBackend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    /// Encodes a caption into conditioning. Empty captions are rejected.
    fn embed_text(&self, caption: &str) -> Result<Conditioning, DiffusionError>;

    /// Standard-normal latent drawn from `seed`.
    fn noise_latent(&self, seed: u64) -> Latent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Latent((0..self.spec().latent_dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// Runs the full reverse process and captures every iteration.
    fn reverse_diffuse(&self, req: &DiffusionRequest<'_>) -> Result<LatentTrace, DiffusionError>;

    fn decode_latent(
        &self,
        z: &Latent,
        step_index: usize,
        mode: RenderMode,
    ) -> Result<ImageArtifact, DiffusionError>;

    /// Maps an image back to latent space.
    fn encode_image(&self, image: &ImageArtifact) -> Result<Latent, DiffusionError> {
        match &image.payload {
            ImagePayload::Latent { values } if values.len() == self.spec().latent_dim => {
                Ok(Latent(values.clone()))
            }
            ImagePayload::Latent { values } => Err(DiffusionError::Contract(format!(
                "image payload has {} values, latent_dim is {}",
                values.len(),
                self.spec().latent_dim
            ))),
            ImagePayload::Rgb { .. } => {
                Err(DiffusionError::Contract("rgb payloads cannot be encoded back to latents".into()))
            }
        }
    }
}

/// `(1 - strength) * E(image) + strength * noise(seed)`.
pub fn img2img_init(
    backend: &dyn DiffusionBackend,
    image: &ImageArtifact,
    strength: f64,
    seed: u64,
) -> Result<Latent, DiffusionError> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(DiffusionError::Validation(format!("strength must lie in [0, 1], got {strength}")));
    }
    let encoded = backend.encode_image(image)?;
    Ok(encoded.lerp(&backend.noise_latent(seed), strength))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub backend_id: String,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub alpha: f64,
    pub total_iterations: usize,
    pub schedule: NoiseSchedule,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            backend_id: "toy".into(),
            latent_dim: 16,
            embed_dim: text::HASHED_DIM,
            alpha: 0.1,
            total_iterations: 50,
            schedule: NoiseSchedule::None,
        }
    }
}

pub const TOY_GRID: u32 = 4;

/// Linear contraction toward a conditioning-determined target:
/// `z <- z + alpha * (g(cond) - z) + sigma_m * xi_m`, with `g` a fixed random
/// projection of the hashed caption embedding.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    config: ToyConfig,
    spec: BackendSpec,
    /// `latent_dim` rows of `embed_dim` columns.
    projection: Vec<Vec<f64>>,
    /// `3 * TOY_GRID^2` rows of `latent_dim` columns.
    render: Vec<Vec<f64>>,
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Result<Self, DiffusionError> {
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(DiffusionError::Validation(format!("alpha must lie in (0, 1), got {}", config.alpha)));
        }
        if config.latent_dim == 0 || config.embed_dim == 0 || config.total_iterations == 0 {
            return Err(DiffusionError::Validation("dimensions and iteration count must be positive".into()));
        }
        let gaussian_rows = |label: &str, rows: usize, cols: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(text::derive_seed(0, &[label, &config.backend_id]));
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let projection = gaussian_rows("projection", config.latent_dim, config.embed_dim);
        let pixels = (3 * TOY_GRID * TOY_GRID) as usize;
        let render = gaussian_rows("render", pixels, config.latent_dim);
        let spec = BackendSpec {
            backend_id: config.backend_id.clone(),
            latent_dim: config.latent_dim,
            total_iterations: config.total_iterations,
            deterministic: config.schedule.is_deterministic(),
            schedule: config.schedule,
        };
        Ok(Self { config, spec, projection, render })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    /// The contraction target `g(cond)`.
    pub fn target(&self, cond: &[f64]) -> Result<Latent, DiffusionError> {
        if cond.len() != self.config.embed_dim {
            return Err(DiffusionError::Contract(format!(
                "conditioning has {} dims, expected {}",
                cond.len(),
                self.config.embed_dim
            )));
        }
        Ok(Latent(self.projection.iter().map(|row| text::dot(row, cond)).collect()))
    }

    /// Runs the update rule from `init` toward an explicit target. Exposed so
    /// callers can drive the contraction with a hand-picked `g`.
    pub fn run_to_target(
        &self,
        step_index: usize,
        init: &Latent,
        target: &Latent,
        iterations: usize,
        noise_seed: u64,
        digest: &str,
    ) -> Result<LatentTrace, DiffusionError> {
        let dim = self.config.latent_dim;
        if init.dim() != dim || target.dim() != dim {
            return Err(DiffusionError::Contract(format!(
                "latent has {} dims, backend expects {dim}",
                init.dim()
            )));
        }
        if iterations == 0 {
            return Err(DiffusionError::Validation("reverse diffusion needs at least one iteration".into()));
        }
        let alpha = self.config.alpha;
        let mut z = init.0.clone();
        let mut trace = Vec::with_capacity(iterations + 1);
        trace.push(init.clone());
        for m in 1..=iterations {
            let sigma = self.config.schedule.sigma(m, iterations);
            let mut rng = (sigma != 0.0).then(|| {
                ChaCha8Rng::seed_from_u64(text::derive_seed(
                    noise_seed,
                    &["xi", &step_index.to_string(), &m.to_string()],
                ))
            });
            for (zc, gc) in z.iter_mut().zip(&target.0) {
                *zc += alpha * (gc - *zc);
                if let Some(rng) = rng.as_mut() {
                    *zc += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            trace.push(Latent(z.clone()));
        }
        Ok(LatentTrace {
            step_index,
            total_iterations: iterations,
            conditioning_digest: digest.to_string(),
            iterations: trace,
            encoded_image: None,
        })
    }
}

impl DiffusionBackend for ToyBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn embed_text(&self, caption: &str) -> Result<Conditioning, DiffusionError> {
        if caption.trim().is_empty() {
            return Err(DiffusionError::Validation("caption is empty".into()));
        }
        let vector = text::unit_hashed(caption, self.config.embed_dim)
            .ok_or_else(|| DiffusionError::Validation(format!("caption `{caption}` has no tokens")))?;
        let digest = text::digest_hex(&Latent(vector.clone()).to_le_bytes());
        Ok(Conditioning {
            prompt: caption.to_string(),
            negative_prompt: NEGATIVE_PROMPTS.iter().map(|s| s.to_string()).collect(),
            vector,
            digest,
        })
    }

    fn reverse_diffuse(&self, req: &DiffusionRequest<'_>) -> Result<LatentTrace, DiffusionError> {
        let target = self.target(&req.conditioning.vector)?;
        self.run_to_target(
            req.step_index,
            req.init,
            &target,
            req.iterations,
            req.noise_seed,
            &req.conditioning.digest,
        )
    }

    fn decode_latent(
        &self,
        z: &Latent,
        step_index: usize,
        mode: RenderMode,
    ) -> Result<ImageArtifact, DiffusionError> {
        if z.dim() != self.config.latent_dim {
            return Err(DiffusionError::Contract(format!(
                "latent has {} dims, backend expects {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        let payload = match mode {
            RenderMode::Identity => ImagePayload::Latent { values: z.0.clone() },
            RenderMode::Rgb => {
                let scale = 48.0 / (self.config.latent_dim as f64).sqrt();
                let data = self
                    .render
                    .iter()
                    .map(|row| (128.0 + scale * text::dot(row, &z.0)).round().clamp(0.0, 255.0) as u8)
                    .collect();
                ImagePayload::Rgb { width: TOY_GRID, height: TOY_GRID, data }
            }
        };
        Ok(ImageArtifact {
            step_index,
            payload,
            renderer_id: format!("{}:{}", self.config.backend_id, match mode {
                RenderMode::Identity => "identity",
                RenderMode::Rgb => "rgb",
            }),
        })
    }
}

/// Little-endian f32 tensor, base64 encoded.
pub fn encode_tensor(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_tensor(encoded: &str) -> Result<Vec<f64>, DiffusionError> {
    let bytes = B64
        .decode(encoded)
        .map_err(|e| DiffusionError::Contract(format!("bad base64 tensor: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(DiffusionError::Contract("tensor byte length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
        .collect())
}

/// Request body of the diffusion adapter protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub prompt: String,
    pub negative_prompt: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub init_latent: Option<String>,
    pub seed: u64,
    pub steps: usize,
    pub capture: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start_timestep: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub latents: BTreeMap<String, String>,
    #[serde(default)]
    pub image: Option<String>,
}

/// Real engine reached over the adapter protocol. The engine owns text
/// encoding, so [`Conditioning::vector`] stays empty.
#[derive(Debug, Clone)]
pub struct AdapterBackend {
    pub adapter: JsonAdapter,
    spec: BackendSpec,
    pub start_timestep: Option<usize>,
}

impl AdapterBackend {
    pub fn new(adapter: JsonAdapter, backend_id: &str, latent_dim: usize, total_iterations: usize) -> Self {
        Self {
            adapter,
            spec: BackendSpec {
                backend_id: backend_id.to_string(),
                latent_dim,
                total_iterations,
                deterministic: false,
                schedule: NoiseSchedule::None,
            },
            start_timestep: None,
        }
    }

    pub fn build_request(&self, req: &DiffusionRequest<'_>) -> AdapterRequest {
        AdapterRequest {
            prompt: req.conditioning.prompt.clone(),
            negative_prompt: req.conditioning.negative_prompt.clone(),
            init_latent: Some(encode_tensor(&req.init.0)),
            seed: req.noise_seed,
            steps: req.iterations,
            capture: (0..=req.iterations).collect(),
            start_timestep: self.start_timestep,
        }
    }
}

impl DiffusionBackend for AdapterBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn embed_text(&self, caption: &str) -> Result<Conditioning, DiffusionError> {
        if caption.trim().is_empty() {
            return Err(DiffusionError::Validation("caption is empty".into()));
        }
        Ok(Conditioning {
            prompt: caption.to_string(),
            negative_prompt: NEGATIVE_PROMPTS.iter().map(|s| s.to_string()).collect(),
            vector: Vec::new(),
            digest: text::digest_hex(caption.as_bytes()),
        })
    }

    fn reverse_diffuse(&self, req: &DiffusionRequest<'_>) -> Result<LatentTrace, DiffusionError> {
        if req.init.dim() != self.spec.latent_dim {
            return Err(DiffusionError::Contract(format!(
                "latent has {} dims, backend expects {}",
                req.init.dim(),
                self.spec.latent_dim
            )));
        }
        let body = self.build_request(req);
        let resp: AdapterResponse = self.adapter.call("/generate", &body)?;
        let mut iterations = Vec::with_capacity(req.iterations + 1);
        for k in 0..=req.iterations {
            let enc = resp
                .latents
                .get(&k.to_string())
                .ok_or_else(|| DiffusionError::Contract(format!("adapter omitted latent {k}")))?;
            iterations.push(Latent(decode_tensor(enc)?));
        }
        let encoded_image = match &resp.image {
            Some(s) => Some(B64.decode(s).map_err(|e| DiffusionError::Contract(format!("bad image: {e}")))?),
            None => None,
        };
        let trace = LatentTrace {
            step_index: req.step_index,
            total_iterations: req.iterations,
            conditioning_digest: req.conditioning.digest.clone(),
            iterations,
            encoded_image,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn decode_latent(
        &self,
        z: &Latent,
        step_index: usize,
        _mode: RenderMode,
    ) -> Result<ImageArtifact, DiffusionError> {
        if z.dim() != self.spec.latent_dim {
            return Err(DiffusionError::Contract("latent dimensionality mismatch".into()));
        }
        Ok(ImageArtifact {
            step_index,
            payload: ImagePayload::Latent { values: z.0.clone() },
            renderer_id: format!("{}:identity", self.spec.backend_id),
        })
    }
}

/// Writes an RGB payload as a PNG, upscaled by nearest neighbour.
pub fn write_png(image: &ImageArtifact, path: &Path, upscale: u32) -> Result<(), DiffusionError> {
    let ImagePayload::Rgb { width, height, data } = &image.payload else {
        return Err(DiffusionError::Contract("only rgb payloads can be written as png".into()));
    };
    let (w, h) = (width * upscale, height * upscale);
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let src = (((y / upscale) * width + x / upscale) * 3) as usize;
            pixels.extend_from_slice(&data[src..src + 3]);
        }
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| DiffusionError::Io(std::io::Error::other(e)))?;
    writer.write_image_data(&pixels).map_err(|e| DiffusionError::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyBackend {
        ToyBackend::new(ToyConfig::default()).unwrap()
    }

    #[test]
    fn embed_is_deterministic_and_unit() {
        let b = toy();
        let a1 = b.embed_text("a bowl of soup").unwrap();
        let a2 = b.embed_text("a bowl of soup").unwrap();
        assert_eq!(a1, a2);
        assert!((text::norm(&a1.vector) - 1.0).abs() < 1e-9);
        assert!(matches!(b.embed_text("  "), Err(DiffusionError::Validation(_))));
    }

    #[test]
    fn distinct_captions_not_parallel() {
        let b = toy();
        let x = b.embed_text("a pot of soup on the stove").unwrap();
        let y = b.embed_text("a plate of salad with avocado").unwrap();
        assert!(text::cosine(&x.vector, &y.vector) < 1.0);
    }

    #[test]
    fn zeros_to_ones_closed_form() {
        let b = toy();
        let ones = Latent(vec![1.0; 16]);
        let tr = b.run_to_target(1, &Latent::zeros(16), &ones, 50, 0, "d").unwrap();
        // 1 - 0.9^10 and 1 - 0.9^50
        for c in &tr.at(10).unwrap().0 {
            assert!((c - 0.651_321_559_9).abs() < 1e-9);
        }
        for c in &tr.final_latent().0 {
            assert!((c - 0.994_846_225_6).abs() < 1e-9);
        }
        assert_eq!(tr.iterations.len(), 51);
        tr.validate().unwrap();
    }

    #[test]
    fn traces_are_bit_identical() {
        let b = toy();
        let c = b.embed_text("whisk the eggs").unwrap();
        let init = b.noise_latent(5);
        let req = DiffusionRequest { step_index: 2, init: &init, conditioning: &c, iterations: 50, noise_seed: 1 };
        assert_eq!(b.reverse_diffuse(&req).unwrap(), b.reverse_diffuse(&req).unwrap());
    }

    #[test]
    fn stochastic_schedule_is_seeded() {
        let b = ToyBackend::new(ToyConfig { schedule: NoiseSchedule::Constant { sigma: 0.05 }, ..ToyConfig::default() }).unwrap();
        assert!(!b.spec().deterministic);
        let c = b.embed_text("whisk the eggs").unwrap();
        let init = b.noise_latent(5);
        let run = |seed| {
            b.reverse_diffuse(&DiffusionRequest { step_index: 1, init: &init, conditioning: &c, iterations: 20, noise_seed: seed })
                .unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1).final_latent(), run(2).final_latent());
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let b = toy();
        let c = b.embed_text("x y").unwrap();
        let bad = Latent::zeros(3);
        let req = DiffusionRequest { step_index: 1, init: &bad, conditioning: &c, iterations: 5, noise_seed: 0 };
        assert!(matches!(b.reverse_diffuse(&req), Err(DiffusionError::Contract(_))));
        assert!(matches!(b.decode_latent(&bad, 1, RenderMode::Identity), Err(DiffusionError::Contract(_))));
    }

    #[test]
    fn negative_prompt_does_not_touch_latents() {
        let b = toy();
        let c = b.embed_text("whisk the eggs").unwrap();
        let mut bare = c.clone();
        bare.negative_prompt.clear();
        let init = b.noise_latent(5);
        let run = |cond: &Conditioning| {
            b.reverse_diffuse(&DiffusionRequest { step_index: 1, init: &init, conditioning: cond, iterations: 10, noise_seed: 0 })
                .unwrap()
        };
        assert_eq!(run(&c), run(&bare));
    }

    #[test]
    fn identity_decode_round_trips() {
        let b = toy();
        let z = b.noise_latent(11);
        let img = b.decode_latent(&z, 1, RenderMode::Identity).unwrap();
        assert_eq!(b.encode_image(&img).unwrap(), z);
        assert_eq!(img, b.decode_latent(&z, 1, RenderMode::Identity).unwrap());
    }

    #[test]
    fn zero_latent_renders_neutral_grey() {
        let b = toy();
        let img = b.decode_latent(&Latent::zeros(16), 1, RenderMode::Rgb).unwrap();
        match img.payload {
            ImagePayload::Rgb { width, height, data } => {
                assert_eq!((width, height), (TOY_GRID, TOY_GRID));
                assert!(data.iter().all(|&p| p == 128));
            }
            _ => panic!("expected rgb"),
        }
    }

    #[test]
    fn img2img_boundaries_and_midpoint() {
        let b = toy();
        let z = Latent((0..16).map(|k| k as f64).collect());
        let img = b.decode_latent(&z, 1, RenderMode::Identity).unwrap();
        assert_eq!(img2img_init(&b, &img, 0.0, 3).unwrap(), z);
        let other = b.decode_latent(&Latent(vec![-7.0; 16]), 1, RenderMode::Identity).unwrap();
        assert_eq!(img2img_init(&b, &img, 1.0, 3).unwrap(), img2img_init(&b, &other, 1.0, 3).unwrap());
        let noise = b.noise_latent(3);
        let mid = img2img_init(&b, &img, 0.5, 3).unwrap();
        for k in 0..16 {
            assert!((mid.0[k] - (0.5 * k as f64 + 0.5 * noise.0[k])).abs() < 1e-12);
        }
        assert!(matches!(img2img_init(&b, &img, 1.5, 3), Err(DiffusionError::Validation(_))));
    }

    #[test]
    fn tensor_codec_round_trips_f32() {
        let v = vec![0.5, -1.25, 3.0];
        assert_eq!(decode_tensor(&encode_tensor(&v)).unwrap(), v);
        assert!(decode_tensor("AAA=").is_err());
    }

    #[test]
    fn z_t_notation() {
        let b = toy();
        let tr = b.run_to_target(1, &Latent::zeros(16), &Latent(vec![1.0; 16]), 50, 0, "d").unwrap();
        assert_eq!(tr.z_t(50), Some(tr.initial()));
        assert_eq!(tr.z_t(0), Some(tr.final_latent()));
        assert_eq!(tr.z_t(51), None);
    }
}
