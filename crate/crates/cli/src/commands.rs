use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use stepvis::annotation::{create_job_set, parse_records, AnnotationStore, SequenceInput};
use stepvis::context::{
    build_captioner_prompt, decode_task, emit_training_pairs, AdapterCaptioner, CaptionIndex, CaptionRecord,
    DecoderConfig, FinetuneConfig,
};
use stepvis::diffusion::{ToyBackend, ToyConfig};
use stepvis::evaluation::{
    aggregate_likert, aggregate_pairwise, aggregate_rank_annotations, evaluate_sequence, mean, round2,
    tally_error_types, write_summary_csv, AlignmentText, AnnotationTaskType, MetricReport,
};
use stepvis::generator::{
    batch_entry, illustrate_task, read_sequence, write_sequence, BatchManifest, DirTraceStore, GenerateError,
    GeneratedSequence, GeneratorConfig, Illustrator, TaskStatus,
};
use stepvis::planner::Strategy;
use stepvis::task::{build_context_window, filter_tasks, to_task_file, FilterPolicy, ManualTask, WhitespaceTokenizer, WindowMode};
use stepvis::synthetic;

use crate::args::*;
use crate::corpus::{load_captions, load_corpus, read_text, write_file, write_json, write_jsonl};
use crate::error::{CliError, CliResult};
use crate::setup;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::CaptionPrep(a) => caption_prep(&a),
        Command::CaptionIngest(a) => caption_ingest(&a),
        Command::DecodeCaptions(a) => decode_captions(&a),
        Command::Generate(a) => generate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::AnnotateJobs(a) => annotate_jobs(&a),
        Command::AnnotateServe(a) => annotate_serve(&a),
        Command::Aggregate(a) => aggregate(&a),
    }
}

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a T,
}

/// Resolved arguments of a run, written next to its outputs.
fn snapshot<T: Serialize>(path: &Path, command: &str, args: &T) -> CliResult<()> {
    write_json(path, &RunConfig { command, version: env!("CARGO_PKG_VERSION"), args })
}

/// `<dir>/<stem>.config.json` beside a single-file output.
fn sibling_config(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.config.json"))
}

#[derive(Serialize)]
struct IngestReport {
    input_tasks: usize,
    kept: usize,
    excluded: usize,
    removed_steps: usize,
    steps: usize,
    mean_steps: f64,
}

#[derive(Serialize)]
struct RemovedStep<'a> {
    task_id: &'a str,
    text: &'a str,
}

fn ingest(a: &IngestArgs) -> CliResult<()> {
    let tasks = match (&a.corpus, a.synthetic) {
        (Some(p), _) => load_corpus(p)?,
        (None, Some(n)) => synthetic::corpus(n, a.seed),
        (None, None) => return Err(CliError::Usage("ingest needs --corpus or --synthetic".into())),
    };
    let policy = FilterPolicy {
        min_steps: a.min_steps,
        max_steps: a.max_steps,
        max_step_tokens: a.max_tokens,
        ..FilterPolicy::default()
    };
    policy.validate().map_err(CliError::Config)?;
    let outcome = filter_tasks(&tasks, &policy, &WhitespaceTokenizer);

    let mut manifest = String::new();
    for t in &outcome.kept {
        let rel = format!("tasks/{}.json", t.id);
        write_file(&a.out.join(&rel), to_task_file(t).as_bytes())?;
        manifest.push_str(&rel);
        manifest.push('\n');
    }
    write_file(&a.out.join("manifest.txt"), manifest.as_bytes())?;
    write_jsonl(&a.out.join("exclusions.jsonl"), &outcome.excluded)?;
    write_jsonl(
        &a.out.join("removed_steps.jsonl"),
        outcome.removed_steps.iter().map(|(task_id, text)| RemovedStep { task_id, text }),
    )?;
    let steps: usize = outcome.kept.iter().map(ManualTask::len).sum();
    let report = IngestReport {
        input_tasks: tasks.len(),
        kept: outcome.kept.len(),
        excluded: outcome.excluded.len(),
        removed_steps: outcome.removed_steps.len(),
        steps,
        mean_steps: if outcome.kept.is_empty() { 0.0 } else { steps as f64 / outcome.kept.len() as f64 },
    };
    write_json(&a.out.join("report.json"), &report)?;
    snapshot(&a.out.join("run_config.json"), "ingest", a)?;
    println!(
        "kept {} of {} tasks ({} steps, {:.2} per task); excluded {}; removed {} non-action steps",
        report.kept, report.input_tasks, report.steps, report.mean_steps, report.excluded, report.removed_steps
    );
    Ok(())
}

#[derive(Serialize)]
struct PromptRecord<'a> {
    task_id: &'a str,
    step_index: usize,
    style: stepvis::CaptionStyle,
    prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<&'a str>,
}

fn caption_prep(a: &CaptionPrepArgs) -> CliResult<()> {
    let tasks = load_corpus(&a.corpus)?;
    let width = a.style.captioner_window();
    let captioner = if a.call {
        Some(AdapterCaptioner { adapter: setup::adapter("captioner", a.captioner_url.as_deref(), a.adapter_timeout)? })
    } else {
        None
    };
    let mut prompts = Vec::new();
    let mut captions = Vec::new();
    for t in &tasks {
        for s in &t.steps {
            let window = build_context_window(t, s.index, width, WindowMode::StepsOnly, &[])
                .map_err(|e| CliError::data(&t.id, e))?;
            match &captioner {
                Some(c) => {
                    let image = s.ground_truth_image.as_deref().ok_or_else(|| {
                        CliError::Data(format!("{} step {} has no image to caption", t.id, s.index))
                    })?;
                    let caption = c.caption(&window, a.style, image)?;
                    captions.push(CaptionRecord {
                        task_id: t.id.clone(),
                        step_index: s.index,
                        style: a.style,
                        text: caption.text,
                    });
                }
                None => prompts.push(PromptRecord {
                    task_id: &t.id,
                    step_index: s.index,
                    style: a.style,
                    prompt: build_captioner_prompt(&window, a.style),
                    image: s.ground_truth_image.as_deref(),
                }),
            }
        }
    }
    if captioner.is_some() {
        write_jsonl(&a.out, &captions)?;
        println!("wrote {} captions to {}", captions.len(), a.out.display());
    } else {
        write_jsonl(&a.out, &prompts)?;
        println!("wrote {} captioner prompts to {}", prompts.len(), a.out.display());
    }
    snapshot(&sibling_config(&a.out), "caption-prep", a)
}

fn caption_ingest(a: &CaptionIngestArgs) -> CliResult<()> {
    let tasks = load_corpus(&a.corpus)?;
    let records = load_captions(&a.captions)?;
    let known: BTreeSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    let unknown = records.iter().filter(|r| !known.contains(r.task_id.as_str())).count();
    let index = CaptionIndex::from_records(&records);
    let config = DecoderConfig { context_mode: setup::context_mode(a.window, a.context_mode), caption_style: a.style };
    let (pairs, manifest) = emit_training_pairs(&tasks, &index, &config, a.seed)?;
    write_jsonl(&a.out.join("training_pairs.jsonl"), &pairs)?;
    write_json(&a.out.join("training_manifest.json"), &manifest)?;
    write_json(&a.out.join("finetune_config.json"), &FinetuneConfig::default())?;
    snapshot(&a.out.join("run_config.json"), "caption-ingest", a)?;
    println!(
        "{} training pairs ({} train, {} test) from {} captions; {} captions name unknown tasks",
        manifest.total,
        manifest.train,
        manifest.test,
        records.len(),
        unknown
    );
    Ok(())
}

fn decode_captions(a: &DecodeCaptionsArgs) -> CliResult<()> {
    let tasks = load_corpus(&a.corpus)?;
    let decoder = setup::decoder(&a.decoder)?;
    let config = setup::decoder_config(&a.decoder);
    let pool = setup::thread_pool(a.jobs)?;
    let decoded: Vec<_> = pool.install(|| tasks.par_iter().map(|t| decode_task(t, &config, decoder.as_ref())).collect());
    let mut records = Vec::new();
    for (t, caps) in tasks.iter().zip(decoded) {
        let caps = caps.map_err(|e| match CliError::from(e) {
            CliError::Adapter(m) => CliError::Adapter(format!("{}: {m}", t.id)),
            other => CliError::data(&t.id, other),
        })?;
        records.extend(caps.into_iter().map(|c| CaptionRecord {
            task_id: t.id.clone(),
            step_index: c.step_index,
            style: c.style,
            text: c.text,
        }));
    }
    write_jsonl(&a.out, &records)?;
    snapshot(&sibling_config(&a.out), "decode-captions", a)?;
    println!("wrote {} captions for {} tasks to {}", records.len(), tasks.len(), a.out.display());
    Ok(())
}

pub struct BatchOutcome {
    pub manifest: BatchManifest,
    pub sequences: Vec<GeneratedSequence>,
    pub adapter_failures: usize,
}

/// Illustrates `tasks` into `out`, continuing past per-task failures.
pub fn generate_batch(
    tasks: &[ManualTask],
    a: &GenerateArgs,
    config: &GeneratorConfig,
    out: &Path,
) -> CliResult<BatchOutcome> {
    let timeout = a.decoder.adapter_timeout;
    let decoder = setup::decoder(&a.decoder)?;
    let embedder = setup::embedder(&a.embedder, timeout)?;
    let backend = setup::backend(&a.backend, timeout)?;
    let captions = match &a.plan.captions {
        Some(p) => Some(CaptionIndex::from_records(&load_captions(p)?)),
        None => None,
    };
    let store = DirTraceStore::new(out);
    let ctx = Illustrator {
        decoder: decoder.as_ref(),
        embedder: embedder.as_ref(),
        backend: backend.as_ref(),
        store: &store,
        captions: captions.as_ref(),
    };
    let pool = setup::thread_pool(a.plan.jobs)?;
    let results: Vec<Result<GeneratedSequence, GenerateError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let seq = illustrate_task(t, config, &ctx)?;
                write_sequence(out, &seq, ctx.backend)?;
                Ok(seq)
            })
            .collect()
    });
    let manifest = BatchManifest {
        config: config.clone(),
        backend_id: backend.spec().backend_id.clone(),
        tasks: tasks.iter().zip(&results).map(|(t, r)| batch_entry(t, r)).collect(),
    };
    manifest.write(out)?;
    let adapter_failures = results.iter().filter(|r| r.as_ref().is_err_and(GenerateError::is_adapter_failure)).count();
    for (t, r) in tasks.iter().zip(&results) {
        if let Err(e) = r {
            eprintln!("task {} failed: {e}", t.id);
        }
    }
    Ok(BatchOutcome { manifest, sequences: results.into_iter().filter_map(Result::ok).collect(), adapter_failures })
}

fn batch_status(outcome: &BatchOutcome, out: &Path) -> CliResult<()> {
    let failures = outcome.manifest.failures();
    println!(
        "generated {} of {} tasks into {}",
        outcome.manifest.tasks.len() - failures,
        outcome.manifest.tasks.len(),
        out.display()
    );
    match (failures, outcome.adapter_failures) {
        (0, _) => Ok(()),
        (n, 0) => Err(CliError::Data(format!("{n} task(s) failed; see manifest.json"))),
        (n, m) => Err(CliError::Adapter(format!("{n} task(s) failed, {m} on adapter calls; see manifest.json"))),
    }
}

fn generate(a: &GenerateArgs) -> CliResult<()> {
    let config = setup::generator_config(&a.plan, &a.decoder, a.backend.iterations)?;
    let tasks = load_corpus(&a.corpus)?;
    snapshot(&a.out.join("run_config.json"), "generate", a)?;
    let outcome = generate_batch(&tasks, a, &config, &a.out)?;
    batch_status(&outcome, &a.out)
}

/// Metric reports for every successful task of a batch directory.
pub fn evaluate_batch(runs: &Path, tasks: &[ManualTask], m: &MetricArgs, timeout: u64) -> CliResult<Vec<MetricReport>> {
    let manifest = BatchManifest::read(runs).map_err(|e| CliError::data(runs.join("manifest.json").display(), e))?;
    let by_id: BTreeMap<&str, &ManualTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut sequences = Vec::new();
    for entry in manifest.tasks.iter().filter(|e| e.status == TaskStatus::Ok) {
        let dir = runs.join(&entry.task_id);
        sequences.push(read_sequence(&dir).map_err(|e| CliError::data(dir.display(), e))?);
    }
    let toy = match sequences.first() {
        Some(s) if manifest.backend_id == ToyConfig::default().backend_id => Some(
            ToyBackend::new(ToyConfig {
                latent_dim: s.config.latent_dim,
                total_iterations: s.config.total_iterations,
                ..ToyConfig::default()
            })
            .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        _ => None,
    };
    let scorer = setup::scorer(m.scorer, m.scorer_url.as_deref(), toy.as_ref(), timeout)?;
    let metric = setup::metric(m.metric, m.metric_url.as_deref(), timeout)?;
    let text = match m.text {
        TextSource::Step => AlignmentText::Step,
        TextSource::Caption => AlignmentText::Caption,
    };
    sequences
        .iter()
        .map(|seq| {
            let task = by_id
                .get(seq.task_id.as_str())
                .ok_or_else(|| CliError::Data(format!("task {} is not in the corpus", seq.task_id)))?;
            Ok(evaluate_sequence(task, seq, scorer.as_ref(), metric.as_ref(), text, m.scale)?)
        })
        .collect()
}

fn write_reports(runs: &Path, reports: &[MetricReport], summary: &Path) -> CliResult<()> {
    for r in reports {
        write_json(&runs.join(&r.task_id).join("metrics.json"), r)?;
    }
    write_jsonl(&runs.join("metrics.jsonl"), reports)?;
    let mut csv = Vec::new();
    write_summary_csv(reports, &mut csv)?;
    write_file(summary, &csv)
}

fn means(reports: &[MetricReport]) -> (Option<f64>, Option<f64>) {
    let a: Vec<f64> = reports.iter().map(|r| r.alignment_mean).collect();
    let c: Vec<f64> = reports.iter().map(|r| r.coherence_mean).collect();
    (mean(&a), mean(&c))
}

fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let tasks = load_corpus(&a.corpus)?;
    let reports = evaluate_batch(&a.runs, &tasks, &a.metrics, a.adapter_timeout)?;
    let summary = a.out.clone().unwrap_or_else(|| a.runs.join("summary.csv"));
    write_reports(&a.runs, &reports, &summary)?;
    snapshot(&a.runs.join("evaluate_config.json"), "evaluate", a)?;
    let (al, co) = means(&reports);
    println!(
        "{} sequences: alignment {:.4}, coherence distance {:.6}; summary at {}",
        reports.len(),
        al.unwrap_or(f64::NAN),
        co.unwrap_or(f64::NAN),
        summary.display()
    );
    Ok(())
}

fn sweep(a: &SweepArgs) -> CliResult<()> {
    let g = &a.generate;
    let base = setup::generator_config(&g.plan, &g.decoder, g.backend.iterations)?;
    let tasks = load_corpus(&g.corpus)?;
    snapshot(&g.out.join("run_config.json"), "sweep", a)?;
    let param = match a.param {
        SweepParam::K => "k",
        SweepParam::Eta => "eta",
    };
    let mut table = String::from("param,value,tasks,failures,alignment_mean,coherence_mean\n");
    let mut worst: Option<CliError> = None;
    for raw in &a.values {
        let raw = raw.trim();
        let mut cfg = base.clone();
        match a.param {
            SweepParam::K => {
                cfg.planner.strategy = Strategy::LatentFixed;
                cfg.planner.fixed_k = raw.parse().map_err(|_| CliError::Usage(format!("k value `{raw}` is not an integer")))?;
            }
            SweepParam::Eta => {
                cfg.planner.strategy = Strategy::Adaptive;
                cfg.planner.eta = raw.parse().map_err(|_| CliError::Usage(format!("eta value `{raw}` is not a number")))?;
            }
        }
        cfg.planner.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let out = g.out.join(format!("{param}_{raw}"));
        let outcome = generate_batch(&tasks, g, &cfg, &out)?;
        let reports = if outcome.sequences.is_empty() {
            Vec::new()
        } else {
            evaluate_batch(&out, &tasks, &a.metrics, g.decoder.adapter_timeout)?
        };
        write_reports(&out, &reports, &out.join("summary.csv"))?;
        let (al, co) = means(&reports);
        let fmt = |x: Option<f64>, p: usize| x.map(|v| format!("{v:.p$}")).unwrap_or_default();
        let _ = writeln!(
            table,
            "{param},{raw},{},{},{},{}",
            outcome.manifest.tasks.len(),
            outcome.manifest.failures(),
            fmt(al, 6),
            fmt(co, 6)
        );
        println!("{param}={raw}: alignment {} coherence {}", fmt(al, 4), fmt(co, 6));
        if let Err(e) = batch_status(&outcome, &out) {
            worst = Some(e);
        }
    }
    write_file(&g.out.join("sweep.csv"), table.as_bytes())?;
    worst.map_or(Ok(()), Err)
}

fn annotate_jobs(a: &AnnotateJobsArgs) -> CliResult<()> {
    let mut runs: Vec<(String, PathBuf)> = Vec::new();
    for spec in &a.runs {
        let (method, dir) = spec
            .split_once('=')
            .filter(|(m, d)| !m.is_empty() && !d.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--run expects METHOD=DIR, got `{spec}`")))?;
        runs.push((method.to_string(), PathBuf::from(dir)));
    }
    let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
    let texts: BTreeMap<&str, Vec<String>> = corpus
        .iter()
        .flatten()
        .map(|t| (t.id.as_str(), t.steps.iter().map(|s| s.text.clone()).collect()))
        .collect();

    let mut per_method: Vec<BTreeMap<String, SequenceInput>> = Vec::new();
    for (method, dir) in &runs {
        let manifest = BatchManifest::read(dir).map_err(|e| CliError::data(dir.join("manifest.json").display(), e))?;
        let root = std::fs::canonicalize(dir).map_err(|e| CliError::data(dir.display(), e))?;
        let mut seqs = BTreeMap::new();
        for entry in manifest.tasks.iter().filter(|e| e.status == TaskStatus::Ok) {
            let seq = read_sequence(&root.join(&entry.task_id)).map_err(|e| CliError::data(&entry.task_id, e))?;
            let steps = texts
                .get(seq.task_id.as_str())
                .cloned()
                .unwrap_or_else(|| seq.steps.iter().map(|r| r.caption.text.clone()).collect());
            let images = seq.steps.iter().map(|r| root.join(&seq.task_id).join(format!("step_{}.png", r.step_index))).collect();
            seqs.insert(seq.task_id.clone(), SequenceInput { method: method.clone(), task_id: seq.task_id, images, steps });
        }
        per_method.push(seqs);
    }
    let task_type: AnnotationTaskType = a.task_type.into();
    let groups: Vec<Vec<SequenceInput>> = if task_type == AnnotationTaskType::Likert {
        per_method.iter().flat_map(|m| m.values().map(|s| vec![s.clone()])).collect()
    } else {
        let common: BTreeSet<&String> = per_method
            .iter()
            .map(|m| m.keys().collect::<BTreeSet<_>>())
            .reduce(|acc, k| acc.intersection(&k).copied().collect())
            .unwrap_or_default();
        common.iter().map(|id| per_method.iter().map(|m| m[*id].clone()).collect()).collect()
    };
    let jobs = create_job_set(&a.job_set, groups, task_type, a.shuffle_seed)?;
    let store = AnnotationStore::open(&a.data_dir)?;
    if store.has_job_set(&a.job_set) {
        return Err(CliError::Data(format!("job set `{}` already exists in {}", a.job_set, a.data_dir.display())));
    }
    let n = jobs.len();
    store.add_job_set(&a.job_set, jobs)?;
    println!("created {n} {} jobs in set `{}`", task_type.as_str(), a.job_set);
    Ok(())
}

fn annotate_serve(a: &ServeArgs) -> CliResult<()> {
    let store = Arc::new(AnnotationStore::open(&a.data_dir)?);
    let app = crate::server::router(store, a.static_dir.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?;
        println!("annotation service listening on http://{addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Config(e.to_string()))
    })
}

fn emit<T: Serialize>(format: OutputFormat, value: &T, text: String) -> CliResult<()> {
    match format {
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?)
        }
        OutputFormat::Text => print!("{text}"),
    }
    Ok(())
}

fn aggregate(a: &AggregateArgs) -> CliResult<()> {
    let raw = read_text(&a.input)?;
    if a.table == TableKind::Errors {
        let total = a.total.ok_or_else(|| CliError::Usage("--type errors needs --total".into()))?;
        let labels: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let tally = tally_error_types(&labels, total)?;
        let mut text = format!("{:<14} {:>6} {:>8}\n", "error", "count", "share");
        for (c, n) in &tally.counts {
            let name = serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(text, "{name:<14} {n:>6} {:>7.2}%", tally.shares[c]);
        }
        let _ = writeln!(text, "total evaluated: {total}");
        return emit(a.format, &tally, text);
    }
    let mut records = parse_records(&raw)?;
    if let Some(set) = &a.job_set {
        records.retain(|r| &r.job_set == set);
    }
    match a.table {
        TableKind::Rank => {
            let s = aggregate_rank_annotations(&records)?;
            let mut text = format!("{:<16} {:>8} {:>8} {:>8}\n", "method", "best", "second", "third");
            for m in s.best.keys() {
                let _ = writeln!(text, "{m:<16} {:>8.2} {:>8.2} {:>8.2}", s.best[m], s.second[m], s.third[m]);
            }
            let _ = writeln!(text, "no good sequence: {:.2}% of {} records", s.no_good_share, s.total);
            emit(a.format, &s, text)
        }
        TableKind::Pairwise => {
            let method_a = match &a.method_a {
                Some(m) => m.clone(),
                None => records
                    .iter()
                    .flat_map(|r| r.methods.iter())
                    .min()
                    .cloned()
                    .ok_or_else(|| CliError::Data("no pairwise records".into()))?,
            };
            let s = aggregate_pairwise(&records, &method_a)?;
            let text = format!(
                "{:<24} {:>8.2}\n{:<24} {:>8.2}\n{:<24} {:>8.2}\n{:<24} {:>8.2}\nrecords: {}\n",
                format!("{method_a} wins"),
                s.win_a,
                "other wins",
                s.win_b,
                "tie",
                s.tie,
                "no good",
                s.no_good,
                s.total
            );
            emit(a.format, &s, text)
        }
        TableKind::Likert => {
            let stats = aggregate_likert(&records)?;
            let mut text = format!("{:<16} {:>14} {:>6}\n", "method", "rating", "n");
            for (m, st) in &stats {
                let _ = writeln!(text, "{m:<16} {:>6.2} ± {:<5.2} {:>6}", round2(st.mean), round2(st.std), st.n);
            }
            emit(a.format, &stats, text)
        }
        TableKind::Errors => unreachable!("handled above"),
    }
}
