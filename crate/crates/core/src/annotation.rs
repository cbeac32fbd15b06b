//! Annotation jobs, annotator progress and append-only response storage.
//!
//! Served jobs refer to sequences only by positional labels and to images by
//! `<job_id>/<label>/step_<i>.png` media paths, so no method identity reaches
//! the annotator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{AnnotationRecord, AnnotationTaskType, Verdict};
use crate::generator::write_atomic;
use crate::text;

pub const RECORDS_FILE: &str = "annotations.jsonl";
const JOBS_FILE: &str = "jobs.json";
const ANNOTATORS_FILE: &str = "annotators.json";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown annotator `{0}`")]
    Auth(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Validation(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

/// One generated (or ground-truth) sequence offered for annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInput {
    pub method: String,
    pub task_id: String,
    pub images: Vec<PathBuf>,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRef {
    pub label: String,
    pub method: String,
    pub images: Vec<PathBuf>,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationJob {
    pub job_id: String,
    pub job_set: String,
    pub task_type: AnnotationTaskType,
    pub task_id: String,
    pub sequences: Vec<SequenceRef>,
}

/// What an annotator sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicJob {
    pub job_id: String,
    pub task_type: AnnotationTaskType,
    pub sequences: Vec<PublicSequence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicSequence {
    pub label: String,
    pub images: Vec<String>,
    pub steps: Vec<String>,
}

impl AnnotationJob {
    pub fn public(&self) -> PublicJob {
        PublicJob {
            job_id: self.job_id.clone(),
            task_type: self.task_type,
            sequences: self
                .sequences
                .iter()
                .map(|s| PublicSequence {
                    label: s.label.clone(),
                    images: (1..=s.images.len())
                        .map(|i| format!("{}/{}/step_{i}.png", self.job_id, s.label))
                        .collect(),
                    steps: s.steps.clone(),
                })
                .collect(),
        }
    }

    fn sequence(&self, label: &str) -> Option<&SequenceRef> {
        self.sequences.iter().find(|s| s.label == label)
    }
}

pub fn labels(task_type: AnnotationTaskType) -> &'static [&'static str] {
    match task_type {
        AnnotationTaskType::RankBest3 => &["A", "B", "C", "D", "E"],
        AnnotationTaskType::Pairwise => &["left", "right"],
        AnnotationTaskType::Likert => &["A"],
    }
}

/// One job per group; each group must match the task type's arity.
/// Presentation order is shuffled deterministically per job.
pub fn create_job_set(
    job_set: &str,
    groups: Vec<Vec<SequenceInput>>,
    task_type: AnnotationTaskType,
    shuffle_seed: u64,
) -> Result<Vec<AnnotationJob>, ServiceError> {
    if job_set.is_empty() || job_set.contains(['/', '\\']) {
        return Err(ServiceError::Validation(format!("bad job set name `{job_set}`")));
    }
    let mut jobs = Vec::with_capacity(groups.len());
    for (n, mut group) in groups.into_iter().enumerate() {
        let job_id = format!("{job_set}-{:04}", n + 1);
        if group.len() != task_type.arity() {
            return Err(ServiceError::Validation(format!(
                "{job_id}: {} jobs take {} sequences, got {}",
                task_type.as_str(),
                task_type.arity(),
                group.len()
            )));
        }
        let task_id = group[0].task_id.clone();
        if group.iter().any(|s| s.task_id != task_id) {
            return Err(ServiceError::Validation(format!("{job_id}: sequences come from different tasks")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(text::derive_seed(shuffle_seed, &[&job_id]));
        group.shuffle(&mut rng);
        let sequences = group
            .into_iter()
            .zip(labels(task_type))
            .map(|(s, l)| SequenceRef { label: l.to_string(), method: s.method, images: s.images, steps: s.steps })
            .collect();
        jobs.push(AnnotationJob { job_id, job_set: job_set.to_string(), task_type, task_id, sequences });
    }
    Ok(jobs)
}

/// Annotator response as posted by the UI. Selections refer to labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePayload {
    pub annotator: String,
    #[serde(default)]
    pub no_good: bool,
    #[serde(default)]
    pub feedback: Option<String>,
    /// Best, second, third.
    #[serde(default)]
    pub ranking: Option<Vec<String>>,
    /// `left`, `right` or `tie`.
    #[serde(default)]
    pub winner: Option<String>,
    #[serde(default)]
    pub rating: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub record_id: String,
    pub job_id: String,
}

/// Maps a label-based payload onto a method-resolved verdict. Selections
/// sent alongside `no_good` are ignored.
pub fn resolve_verdict(job: &AnnotationJob, p: &ResponsePayload) -> Result<Option<Verdict>, ServiceError> {
    if p.no_good {
        return Ok(None);
    }
    let invalid = |m: &str| Err(ServiceError::Validation(format!("{}: {m}", job.job_id)));
    let method = |label: &str| {
        job.sequence(label)
            .map(|s| s.method.clone())
            .ok_or_else(|| ServiceError::Validation(format!("{}: unknown label `{label}`", job.job_id)))
    };
    let verdict = match job.task_type {
        AnnotationTaskType::RankBest3 => {
            let Some(r) = &p.ranking else { return invalid("ranking required") };
            if r.len() != 3 || r.iter().collect::<BTreeSet<_>>().len() != 3 {
                return invalid("ranking must pick 3 distinct sequences");
            }
            Verdict::RankBest3 { ranking: r.iter().map(|l| method(l)).collect::<Result<_, _>>()? }
        }
        AnnotationTaskType::Pairwise => match p.winner.as_deref() {
            Some("tie") => Verdict::Pairwise { winner: None },
            Some(l @ ("left" | "right")) => Verdict::Pairwise { winner: Some(method(l)?) },
            Some(other) => return invalid(&format!("winner must be left, right or tie, got `{other}`")),
            None => return invalid("winner required"),
        },
        AnnotationTaskType::Likert => match p.rating {
            Some(r @ 1..=5) => Verdict::Likert { rating: r },
            Some(r) => return invalid(&format!("rating {r} outside 1..5")),
            None => return invalid("rating required"),
        },
    };
    Ok(Some(verdict))
}

#[derive(Debug, Default)]
struct State {
    jobs: BTreeMap<String, AnnotationJob>,
    sets: BTreeMap<String, Vec<String>>,
    annotators: BTreeSet<String>,
    answered: BTreeSet<(String, String)>,
    records: Vec<AnnotationRecord>,
}

/// File-backed service state under a data directory.
#[derive(Debug)]
pub struct AnnotationStore {
    dir: PathBuf,
    state: Mutex<State>,
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: &Path) -> Result<T, ServiceError> {
    match fs::read(path) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| ServiceError::Io(e.into())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(e.into()),
    }
}

impl AnnotationStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let sets: BTreeMap<String, Vec<AnnotationJob>> = read_json(&dir.join(JOBS_FILE))?;
        let annotators: BTreeSet<String> = read_json(&dir.join(ANNOTATORS_FILE))?;
        let mut state = State { annotators, ..State::default() };
        for (name, jobs) in sets {
            state.sets.insert(name, jobs.iter().map(|j| j.job_id.clone()).collect());
            state.jobs.extend(jobs.into_iter().map(|j| (j.job_id.clone(), j)));
        }
        let raw = match fs::read_to_string(dir.join(RECORDS_FILE)) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| {
                ServiceError::Validation(format!("{RECORDS_FILE} line {}: {e}", n + 1))
            })?;
            state.answered.insert((r.job_id.clone(), r.annotator_id.clone()));
            state.records.push(r);
        }
        Ok(Self { dir, state: Mutex::new(state) })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    fn persist_jobs(&self, st: &State) -> Result<(), ServiceError> {
        let sets: BTreeMap<&String, Vec<&AnnotationJob>> =
            st.sets.iter().map(|(name, ids)| (name, ids.iter().map(|id| &st.jobs[id]).collect())).collect();
        write_atomic(&self.dir.join(JOBS_FILE), &serde_json::to_vec_pretty(&sets).map_err(std::io::Error::from)?)?;
        Ok(())
    }

    pub fn add_job_set(&self, job_set: &str, jobs: Vec<AnnotationJob>) -> Result<(), ServiceError> {
        let mut st = self.state.lock().unwrap();
        if st.sets.contains_key(job_set) {
            return Err(ServiceError::Conflict(format!("job set {job_set} already exists")));
        }
        if let Some(j) = jobs.iter().find(|j| j.job_set != job_set || st.jobs.contains_key(&j.job_id)) {
            return Err(ServiceError::Conflict(format!("job {} clashes with existing jobs", j.job_id)));
        }
        st.sets.insert(job_set.to_string(), jobs.iter().map(|j| j.job_id.clone()).collect());
        st.jobs.extend(jobs.into_iter().map(|j| (j.job_id.clone(), j)));
        self.persist_jobs(&st)
    }

    pub fn has_job_set(&self, job_set: &str) -> bool {
        self.state.lock().unwrap().sets.contains_key(job_set)
    }

    pub fn register_annotator(&self, id: &str) -> Result<(), ServiceError> {
        let id = id.trim();
        if id.is_empty() || id.len() > 128 {
            return Err(ServiceError::Validation("annotator id must be 1..128 characters".into()));
        }
        let mut st = self.state.lock().unwrap();
        if st.annotators.insert(id.to_string()) {
            let bytes = serde_json::to_vec_pretty(&st.annotators).map_err(std::io::Error::from)?;
            write_atomic(&self.dir.join(ANNOTATORS_FILE), &bytes)?;
        }
        Ok(())
    }

    pub fn next_job(&self, annotator: &str) -> Result<Option<PublicJob>, ServiceError> {
        let st = self.state.lock().unwrap();
        if !st.annotators.contains(annotator) {
            return Err(ServiceError::Auth(annotator.to_string()));
        }
        Ok(st
            .jobs
            .values()
            .find(|j| !st.answered.contains(&(j.job_id.clone(), annotator.to_string())))
            .map(AnnotationJob::public))
    }

    pub fn job(&self, job_id: &str) -> Result<PublicJob, ServiceError> {
        let st = self.state.lock().unwrap();
        st.jobs.get(job_id).map(AnnotationJob::public).ok_or_else(|| ServiceError::NotFound(format!("job {job_id}")))
    }

    pub fn submit_response(
        &self,
        job_id: &str,
        payload: &ResponsePayload,
        timestamp: u64,
    ) -> Result<Receipt, ServiceError> {
        let mut st = self.state.lock().unwrap();
        if !st.annotators.contains(&payload.annotator) {
            return Err(ServiceError::Auth(payload.annotator.clone()));
        }
        let job = st.jobs.get(job_id).ok_or_else(|| ServiceError::NotFound(format!("job {job_id}")))?;
        let key = (job_id.to_string(), payload.annotator.clone());
        if st.answered.contains(&key) {
            return Err(ServiceError::Conflict(format!("{} already answered {job_id}", payload.annotator)));
        }
        let verdict = resolve_verdict(job, payload)?;
        let record = AnnotationRecord {
            record_id: format!("r{:06}", st.records.len() + 1),
            job_id: job_id.to_string(),
            job_set: job.job_set.clone(),
            annotator_id: payload.annotator.clone(),
            task_type: job.task_type,
            methods: job.sequences.iter().map(|s| s.method.clone()).collect(),
            no_good: verdict.is_none(),
            verdict,
            feedback: payload.feedback.clone().filter(|f| !f.trim().is_empty()),
            timestamp,
        };
        record.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;

        let path = self.dir.join(RECORDS_FILE);
        let mut bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        bytes.extend(serde_json::to_vec(&record).map_err(std::io::Error::from)?);
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;

        let receipt = Receipt { record_id: record.record_id.clone(), job_id: job_id.to_string() };
        st.answered.insert(key);
        st.records.push(record);
        Ok(receipt)
    }

    pub fn export_records(&self, job_set: &str) -> Result<Vec<AnnotationRecord>, ServiceError> {
        let st = self.state.lock().unwrap();
        if !st.sets.contains_key(job_set) {
            return Err(ServiceError::NotFound(format!("job set {job_set}")));
        }
        Ok(st.records.iter().filter(|r| r.job_set == job_set).cloned().collect())
    }

    /// Resolves `<job_id>/<label>/step_<i>.png` to the stored image path.
    pub fn media_path(&self, media: &str) -> Result<PathBuf, ServiceError> {
        let nf = || ServiceError::NotFound(format!("media {media}"));
        let mut parts = media.split('/');
        let (Some(job_id), Some(label), Some(file), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(nf());
        };
        let i: usize = file
            .strip_prefix("step_")
            .and_then(|f| f.strip_suffix(".png"))
            .and_then(|n| n.parse().ok())
            .ok_or_else(nf)?;
        let st = self.state.lock().unwrap();
        let seq = st.jobs.get(job_id).and_then(|j| j.sequence(label)).ok_or_else(nf)?;
        i.checked_sub(1).and_then(|k| seq.images.get(k)).cloned().ok_or_else(nf)
    }
}

/// Reads annotation records from JSONL text, skipping blank lines.
pub fn parse_records(jsonl: &str) -> Result<Vec<AnnotationRecord>, ServiceError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| ServiceError::Validation(format!("line {}: {e}", n + 1))))
        .collect()
}
