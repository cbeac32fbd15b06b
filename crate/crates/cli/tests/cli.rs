use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stepvis(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepvis"))
        .args(args)
        .current_dir(dir)
        .env_remove("STEPVIS_DECODER_URL")
        .env_remove("STEPVIS_DECODER_CMD")
        .env_remove("STEPVIS_EMBEDDER_URL")
        .env_remove("STEPVIS_BACKEND_URL")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = stepvis(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    stepvis(dir, args).status.code().unwrap()
}

fn corpus(dir: &Path) {
    ok(dir, &["ingest", "--synthetic", "6", "--seed", "4", "--out", "corpus"]);
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn identical_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        corpus(d);
        ok(d, &["generate", "--corpus", "corpus/manifest.txt", "--out", "run", "--strategy", "adaptive", "--eta", "0.5", "--backend", "toy", "--seed", "7"]);
    }
    let (fa, fb) = (files(&a.path().join("run")), files(&b.path().join("run")));
    assert!(fa.iter().any(|(p, _)| p.ends_with("step_1.png")));
    assert!(fa.iter().any(|(p, _)| p.ends_with("config.json")));
    assert_eq!(fa, fb);
}

#[test]
fn parallel_jobs_match_sequential_output() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "seq", "--seed", "3"]);
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "par", "--seed", "3", "--jobs", "4"]);
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<_> { v.into_iter().filter(|(p, _)| !p.ends_with("run_config.json")).collect() };
    assert_eq!(strip(files(&d.path().join("seq"))), strip(files(&d.path().join("par"))));
}

#[test]
fn generate_writes_the_documented_layout() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "run", "--seed", "1"]);
    let run = d.path().join("run");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tasks"].as_array().unwrap().len(), 6);
    let id = manifest["tasks"][0]["task_id"].as_str().unwrap();
    for f in ["plan.jsonl", "captions.jsonl", "config.json", "step_1.png", "traces/step_1.json"] {
        assert!(run.join(id).join(f).is_file(), "missing {f}");
    }
    let config: serde_json::Value = serde_json::from_slice(&fs::read(run.join(id).join("config.json")).unwrap()).unwrap();
    assert_eq!(config["strategy"], "adaptive");
    assert_eq!(config["eta"], 0.5);
    assert_eq!(config["decoder"]["context_mode"], "s_c1");
    assert_eq!(config["decoder"]["caption_style"], "short");
    let plan = fs::read_to_string(run.join(id).join("plan.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(plan.lines().next().unwrap()).unwrap();
    for key in ["step", "strategy", "j", "sim", "k", "fallback"] {
        assert!(first.get(key).is_some(), "plan record lacks {key}");
    }
    assert!(run.join("run_config.json").is_file());
}

#[test]
fn sweep_runs_one_batch_per_k() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    ok(d.path(), &["sweep", "--param", "k", "--values", "1,2,5,10,20,49", "--corpus", "corpus/manifest.txt", "--out", "sweep"]);
    let table = fs::read_to_string(d.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    for k in [1, 2, 5, 10, 20, 49] {
        let cfg = fs::read_to_string(d.path().join(format!("sweep/k_{k}/manifest.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cfg).unwrap();
        assert_eq!(v["config"]["planner"]["strategy"], "latent_fixed");
        assert_eq!(v["config"]["planner"]["fixed_k"], k);
        assert!(d.path().join(format!("sweep/k_{k}/summary.csv")).is_file());
    }
    assert_eq!(code(d.path(), &["sweep", "--param", "k", "--values", "x", "--corpus", "corpus/manifest.txt", "--out", "bad"]), 2);
}

#[test]
fn evaluate_writes_reports_and_summary() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "run"]);
    ok(d.path(), &["evaluate", "--runs", "run", "--corpus", "corpus/manifest.txt"]);
    let csv = fs::read_to_string(d.path().join("run/summary.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "task_id,strategy,alignment_mean,coherence_mean");
    assert_eq!(csv.lines().count(), 7);
    let reports = fs::read_to_string(d.path().join("run/metrics.jsonl")).unwrap();
    for line in reports.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        let n = r["alignment"].as_array().unwrap().len();
        assert_eq!(r["coherence"].as_array().unwrap().len(), n - 1);
        assert!(r["alignment"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() >= 0.0));
    }
}

const PAIRWISE: &str = r#"{"record_id":"r1","job_id":"j1","job_set":"s","annotator_id":"a","task_type":"pairwise","methods":["proposed","latent_fixed"],"verdict":{"type":"pairwise","winner":"proposed"},"no_good":false,"feedback":null,"timestamp":0}"#;

fn pairwise_records(wins: usize, losses: usize, ties: usize, no_good: usize) -> String {
    let mut out = String::new();
    let mut push = |verdict: &str, ng: bool| {
        let line = PAIRWISE.replace(r#"{"type":"pairwise","winner":"proposed"}"#, verdict).replace(
            r#""no_good":false"#,
            if ng { r#""no_good":true"# } else { r#""no_good":false"# },
        );
        out.push_str(&line);
        out.push('\n');
    };
    (0..wins).for_each(|_| push(r#"{"type":"pairwise","winner":"proposed"}"#, false));
    (0..losses).for_each(|_| push(r#"{"type":"pairwise","winner":"latent_fixed"}"#, false));
    (0..ties).for_each(|_| push(r#"{"type":"pairwise","winner":null}"#, false));
    (0..no_good).for_each(|_| push("null", true));
    out
}

#[test]
fn aggregate_pairwise_prints_table_shares() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("records.jsonl"), pairwise_records(14, 8, 3, 5)).unwrap();
    let text = ok(d.path(), &["aggregate", "--type", "pairwise", "records.jsonl", "--method-a", "proposed"]);
    for want in ["46.67", "26.67", "10.00", "16.67"] {
        assert!(text.contains(want), "{want} missing from\n{text}");
    }
    let json = ok(d.path(), &["aggregate", "--type", "pairwise", "records.jsonl", "--method-a", "proposed", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["win_a"], 46.67);
    assert_eq!(v["total"], 30);
}

#[test]
fn aggregate_error_shares() {
    let d = tempfile::tempdir().unwrap();
    let mut labels = String::new();
    for (label, n) in [("hallucination", 39), ("complex_step", 62), ("copied_input", 72)] {
        for _ in 0..n {
            labels.push_str(label);
            labels.push('\n');
        }
    }
    fs::write(d.path().join("errors.txt"), labels).unwrap();
    let text = ok(d.path(), &["aggregate", "--type", "errors", "errors.txt", "--total", "1000"]);
    for want in ["3.90%", "6.20%", "7.20%"] {
        assert!(text.contains(want), "{want} missing from\n{text}");
    }
    assert_eq!(code(d.path(), &["aggregate", "--type", "errors", "errors.txt"]), 2);
}

#[test]
fn ingest_applies_filtering_rules() {
    let d = tempfile::tempdir().unwrap();
    let task = |id: &str, steps: &[&str]| {
        let steps: Vec<_> = steps.iter().map(|s| serde_json::json!({ "text": s })).collect();
        serde_json::json!({ "id": id, "domain": "recipes", "title": id, "description": "", "resources": [], "steps": steps })
    };
    let long = vec!["word"; 78].join(" ");
    let tasks = [
        task("ok", &["Chop.", "Fry.", "Stir.", "Plate."]),
        task("seven", &["a b", "c d", "e f", "g h", "i j", "k l", "m n"]),
        task("enjoy", &["Chop.", "Fry.", "Stir.", "Enjoy!"]),
        task("long", &["Chop.", "Fry.", "Stir.", &long]),
    ];
    fs::create_dir(d.path().join("raw")).unwrap();
    for t in &tasks {
        fs::write(d.path().join(format!("raw/{}.json", t["id"].as_str().unwrap())), t.to_string()).unwrap();
    }
    let msg = ok(d.path(), &["ingest", "--corpus", "raw", "--out", "clean"]);
    assert!(msg.contains("kept 1 of 4"), "{msg}");
    assert_eq!(fs::read_to_string(d.path().join("clean/manifest.txt")).unwrap(), "tasks/ok.json\n");
    let excl = fs::read_to_string(d.path().join("clean/exclusions.jsonl")).unwrap();
    for (id, reason) in [("seven", "too_many_steps"), ("enjoy", "too_few_steps"), ("long", "step_too_long")] {
        assert!(excl.contains(&format!(r#"{{"id":"{id}","reason":"{reason}"}}"#)), "{excl}");
    }
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    let gen = |extra: &[&str]| {
        let mut args = vec!["generate", "--corpus", "corpus/manifest.txt", "--out", "run"];
        args.extend_from_slice(extra);
        code(d.path(), &args)
    };
    assert_eq!(code(d.path(), &["frobnicate"]), 2);
    assert_eq!(gen(&["--strategy", "sideways"]), 2);
    assert_eq!(gen(&["--decoder", "adapter"]), 3);
    assert_eq!(gen(&["--eta", "1.5"]), 3);
    assert_eq!(gen(&["--backend", "adapter", "--backend-url", "false"]), 4);
    assert_eq!(code(d.path(), &["generate", "--corpus", "missing.txt", "--out", "run"]), 5);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("run/manifest.json")).unwrap()).unwrap();
    assert!(manifest["tasks"].as_array().unwrap().iter().all(|t| t["status"] == "failed"));
}

#[cfg(unix)]
#[test]
fn decoder_command_comes_from_the_environment() {
    use std::os::unix::fs::PermissionsExt;
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    let script = d.path().join("decoder.sh");
    fs::write(&script, "#!/bin/sh\ncat > /dev/null\necho '{\"text\":\"a bowl on a table\"}'\n").unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stepvis"))
        .args(["decode-captions", "--corpus", "corpus/manifest.txt", "--out", "caps.jsonl", "--decoder", "adapter"])
        .current_dir(d.path())
        .env_remove("STEPVIS_DECODER_URL")
        .env("STEPVIS_DECODER_CMD", &script)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let caps = fs::read_to_string(d.path().join("caps.jsonl")).unwrap();
    assert!(caps.lines().count() >= 24);
    assert!(caps.lines().all(|l| l.contains("a bowl on a table")));
    assert!(d.path().join("caps.config.json").is_file());
}

#[test]
fn caption_files_round_trip_into_training_pairs_and_generation() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    ok(d.path(), &["decode-captions", "--corpus", "corpus/manifest.txt", "--out", "caps.jsonl"]);
    let msg = ok(d.path(), &["caption-ingest", "--corpus", "corpus/manifest.txt", "--captions", "caps.jsonl", "--out", "train"]);
    assert!(msg.contains("training pairs"), "{msg}");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("train/training_manifest.json")).unwrap()).unwrap();
    let total = manifest["total"].as_u64().unwrap();
    assert_eq!(manifest["train"].as_u64().unwrap(), total * 4 / 5);
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "pre", "--captions", "caps.jsonl"]);
    ok(d.path(), &["generate", "--corpus", "corpus/manifest.txt", "--out", "live"]);
    let seq = |run: &str| fs::read_to_string(d.path().join(run).join("synthetic-0000/sequence.json")).unwrap();
    let (pre, live): (serde_json::Value, serde_json::Value) =
        (serde_json::from_str(&seq("pre")).unwrap(), serde_json::from_str(&seq("live")).unwrap());
    assert_eq!(pre["steps"][1]["image"], live["steps"][1]["image"]);
}
