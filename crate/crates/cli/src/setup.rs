//! Turns command-line selections into adapters and generator settings.

use std::time::Duration;

use stepvis::adapter::{JsonAdapter, Transport};
use stepvis::context::{AdapterDecoder, ContextMode, DecoderConfig, StubDecoder, TextDecoder};
use stepvis::diffusion::{AdapterBackend, DiffusionBackend, ToyBackend, ToyConfig};
use stepvis::evaluation::{AdapterAlignmentScorer, AdapterImageMetric, AlignmentScorer, ImageMetric, ToyImageMetric};
use stepvis::generator::{ConditioningSource, GeneratorConfig, RetentionPolicy};
use stepvis::planner::{AdapterEmbedder, HashedEmbedder, TextEmbedder};

use crate::args::{BackendArgs, Conditioning, DecoderArgs, DecoderKind, EmbedderArgs, EmbedderKind, EngineKind, PlanArgs};
use crate::error::{CliError, CliResult};

pub fn adapter(what: &str, spec: Option<&str>, timeout_secs: u64) -> CliResult<JsonAdapter> {
    let spec = spec.filter(|s| !s.trim().is_empty()).ok_or_else(|| {
        CliError::Config(format!("{what} adapter selected but no endpoint given (flag or environment variable)"))
    })?;
    let transport =
        Transport::parse(spec).ok_or_else(|| CliError::Config(format!("cannot parse {what} endpoint `{spec}`")))?;
    Ok(JsonAdapter::new(transport).with_timeout(Duration::from_secs(timeout_secs)))
}

pub fn context_mode(window: u8, explicit: Option<ContextMode>) -> ContextMode {
    explicit.unwrap_or(match window {
        1 => ContextMode::S,
        2 => ContextMode::SC1,
        _ => ContextMode::SS1C2,
    })
}

pub fn decoder_config(args: &DecoderArgs) -> DecoderConfig {
    DecoderConfig { context_mode: context_mode(args.window, args.context_mode), caption_style: args.style }
}

pub fn decoder(args: &DecoderArgs) -> CliResult<Box<dyn TextDecoder>> {
    Ok(match args.decoder {
        DecoderKind::Stub => Box::new(StubDecoder),
        DecoderKind::Adapter => {
            let spec = args.decoder_url.as_deref().or(args.decoder_cmd.as_deref());
            Box::new(AdapterDecoder { adapter: adapter("decoder", spec, args.adapter_timeout)? })
        }
    })
}

pub fn embedder(args: &EmbedderArgs, timeout_secs: u64) -> CliResult<Box<dyn TextEmbedder>> {
    Ok(match args.embedder {
        EmbedderKind::Hashed => Box::new(HashedEmbedder::default()),
        EmbedderKind::Adapter => {
            Box::new(AdapterEmbedder { adapter: adapter("embedder", args.embedder_url.as_deref(), timeout_secs)? })
        }
    })
}

pub fn toy_config(args: &BackendArgs) -> ToyConfig {
    ToyConfig {
        latent_dim: args.latent_dim,
        alpha: args.alpha,
        total_iterations: args.iterations,
        ..ToyConfig::default()
    }
}

pub fn backend(args: &BackendArgs, timeout_secs: u64) -> CliResult<Box<dyn DiffusionBackend>> {
    Ok(match args.backend {
        EngineKind::Toy => {
            Box::new(ToyBackend::new(toy_config(args)).map_err(|e| CliError::Config(e.to_string()))?)
        }
        EngineKind::Adapter => {
            let a = adapter("diffusion engine", args.backend_url.as_deref(), timeout_secs)?;
            let mut b = AdapterBackend::new(a, "adapter", args.latent_dim, args.iterations);
            b.start_timestep = args.start_timestep;
            Box::new(b)
        }
    })
}

pub fn retention(spec: &str) -> CliResult<RetentionPolicy> {
    let policy = match spec.trim() {
        "full" => RetentionPolicy::Full,
        s => match s.strip_prefix("last:").map(str::parse) {
            Some(Ok(m)) => RetentionPolicy::LastMSteps { m },
            _ => return Err(CliError::Usage(format!("--retention expects `full` or `last:M`, got `{s}`"))),
        },
    };
    policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(policy)
}

pub fn generator_config(plan: &PlanArgs, decoder: &DecoderArgs, iterations: usize) -> CliResult<GeneratorConfig> {
    let mut cfg = GeneratorConfig::new(plan.strategy, iterations, plan.seed);
    cfg.planner.eta = plan.eta;
    if let Some(n) = plan.n_max {
        cfg.planner.n_max = n;
    }
    cfg.planner.fixed_k = plan.fixed_k;
    cfg.planner.img2img_strength = plan.img2img_strength;
    cfg.decoder = decoder_config(decoder);
    cfg.retention = retention(&plan.retention)?;
    cfg.conditioning = match plan.conditioning {
        Conditioning::Caption => ConditioningSource::Caption,
        Conditioning::Step => ConditioningSource::Step,
    };
    cfg.planner.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Scorer for a run made with the toy engine `toy`, or an adapter.
pub fn scorer<'a>(
    kind: EngineKind,
    url: Option<&str>,
    toy: Option<&'a ToyBackend>,
    timeout_secs: u64,
) -> CliResult<Box<dyn AlignmentScorer + 'a>> {
    Ok(match (kind, toy) {
        (EngineKind::Toy, Some(b)) => Box::new(stepvis::evaluation::ToyAlignmentScorer { backend: b }),
        (EngineKind::Toy, None) => {
            return Err(CliError::Config("the toy alignment scorer only applies to toy-engine runs".into()))
        }
        (EngineKind::Adapter, _) => Box::new(AdapterAlignmentScorer { adapter: adapter("alignment scorer", url, timeout_secs)? }),
    })
}

pub fn metric(kind: EngineKind, url: Option<&str>, timeout_secs: u64) -> CliResult<Box<dyn ImageMetric>> {
    Ok(match kind {
        EngineKind::Toy => Box::new(ToyImageMetric),
        EngineKind::Adapter => Box::new(AdapterImageMetric { adapter: adapter("image metric", url, timeout_secs)? }),
    })
}

pub fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Config(e.to_string()))
}
