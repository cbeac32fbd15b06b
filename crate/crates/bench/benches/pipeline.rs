use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stepvis::context::StubDecoder;
use stepvis::diffusion::{Conditioning, DiffusionBackend, DiffusionRequest, ToyBackend, ToyConfig};
use stepvis::generator::{illustrate_task, GeneratorConfig, Illustrator, MemoryTraceStore};
use stepvis::planner::{compute_latent_iteration, plan_task, HashedEmbedder, PlannerConfig, Strategy};
use stepvis::synthetic;

fn planner(c: &mut Criterion) {
    c.bench_function("compute_latent_iteration", |b| {
        b.iter(|| compute_latent_iteration(black_box(0.73), black_box(0.5), black_box(49)).unwrap())
    });
    let tasks = synthetic::corpus(16, 1);
    let embedder = HashedEmbedder::default();
    let cfg = PlannerConfig::new(Strategy::Adaptive, 50, 0);
    c.bench_function("plan_task/16_tasks", |b| {
        b.iter(|| tasks.iter().map(|t| plan_task(t, &cfg, &embedder).unwrap().len()).sum::<usize>())
    });
}

fn backend(c: &mut Criterion) {
    let backend = ToyBackend::new(ToyConfig::default()).unwrap();
    let cond: Conditioning = backend.embed_text("Whisk the eggs with milk.").unwrap();
    let init = backend.noise_latent(7);
    c.bench_function("toy_reverse_diffuse/50", |b| {
        b.iter(|| {
            let req = DiffusionRequest { step_index: 1, init: &init, conditioning: &cond, iterations: 50, noise_seed: 3 };
            backend.reverse_diffuse(black_box(&req)).unwrap()
        })
    });
}

fn generation(c: &mut Criterion) {
    let backend = ToyBackend::new(ToyConfig::default()).unwrap();
    let embedder = HashedEmbedder::default();
    let task = &synthetic::corpus(1, 5)[0];
    for s in [Strategy::Adaptive, Strategy::Img2Img] {
        let cfg = GeneratorConfig::new(s, 50, 0);
        c.bench_function(&format!("illustrate_task/{s}"), |b| {
            b.iter(|| {
                let store = MemoryTraceStore::default();
                let ctx = Illustrator { decoder: &StubDecoder, embedder: &embedder, backend: &backend, store: &store, captions: None };
                illustrate_task(black_box(task), &cfg, &ctx).unwrap()
            })
        });
    }
}

criterion_group!(benches, planner, backend, generation);
criterion_main!(benches);
