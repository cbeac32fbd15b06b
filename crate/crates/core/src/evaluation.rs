//! Automatic sequence metrics and aggregation of human annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, JsonAdapter};
use crate::diffusion::{encode_tensor, DiffusionError, ImageArtifact, ToyBackend};
use crate::generator::{ConfigSnapshot, GeneratedSequence};
use crate::task::ManualTask;
use crate::text;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("metric adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error("metric: {0}")]
    Diffusion(#[from] DiffusionError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const DEFAULT_ALIGNMENT_SCALE: f64 = 100.0;

fn latent_payload(image: &ImageArtifact) -> Result<&[f64], EvalError> {
    image
        .latent_values()
        .ok_or_else(|| EvalError::Validation(format!("image of step {} has no latent payload", image.step_index)))
}

/// Text-image similarity in `[-1, 1]`.
pub trait AlignmentScorer: Send + Sync {
    fn cosine(&self, text: &str, image: &ImageArtifact) -> Result<f64, EvalError>;
}

/// Cosine between the backend's target for the hashed text embedding and
/// the image's latent payload.
pub struct ToyAlignmentScorer<'a> {
    pub backend: &'a ToyBackend,
}

impl AlignmentScorer for ToyAlignmentScorer<'_> {
    fn cosine(&self, caption: &str, image: &ImageArtifact) -> Result<f64, EvalError> {
        let z = latent_payload(image)?;
        let Some(e) = text::unit_hashed(caption, self.backend.config().embed_dim) else {
            return Ok(0.0);
        };
        let g = self.backend.target(&e)?;
        Ok(text::cosine(&g.0, z))
    }
}

#[derive(Serialize)]
struct AlignRequest<'a> {
    text: &'a str,
    image: String,
}

#[derive(Deserialize)]
struct AlignResponse {
    cosine: f64,
}

/// `{"text","image"} -> {"cosine"}` at `/align`; the image is a base64 f32
/// tensor of the latent payload.
pub struct AdapterAlignmentScorer {
    pub adapter: JsonAdapter,
}

impl AlignmentScorer for AdapterAlignmentScorer {
    fn cosine(&self, caption: &str, image: &ImageArtifact) -> Result<f64, EvalError> {
        let req = AlignRequest { text: caption, image: encode_tensor(latent_payload(image)?) };
        Ok(self.adapter.call::<_, AlignResponse>("/align", &req)?.cosine)
    }
}

pub fn alignment_score(
    caption: &str,
    image: &ImageArtifact,
    scorer: &dyn AlignmentScorer,
    scale: f64,
) -> Result<f64, EvalError> {
    Ok((scale * scorer.cosine(caption, image)?).max(0.0))
}

/// Symmetric image distance.
pub trait ImageMetric: Send + Sync {
    fn distance(&self, a: &ImageArtifact, b: &ImageArtifact) -> Result<f64, EvalError>;
}

/// Euclidean distance between latent payloads divided by `sqrt(dim)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyImageMetric;

impl ImageMetric for ToyImageMetric {
    fn distance(&self, a: &ImageArtifact, b: &ImageArtifact) -> Result<f64, EvalError> {
        let (x, y) = (latent_payload(a)?, latent_payload(b)?);
        if x.len() != y.len() || x.is_empty() {
            return Err(EvalError::Validation("image payloads differ in shape".into()));
        }
        let ss: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        Ok((ss / x.len() as f64).sqrt())
    }
}

#[derive(Serialize)]
struct DistanceRequest {
    a: String,
    b: String,
}

#[derive(Deserialize)]
struct DistanceResponse {
    distance: f64,
}

pub struct AdapterImageMetric {
    pub adapter: JsonAdapter,
}

impl ImageMetric for AdapterImageMetric {
    fn distance(&self, a: &ImageArtifact, b: &ImageArtifact) -> Result<f64, EvalError> {
        let req = DistanceRequest { a: encode_tensor(latent_payload(a)?), b: encode_tensor(latent_payload(b)?) };
        Ok(self.adapter.call::<_, DistanceResponse>("/distance", &req)?.distance)
    }
}

/// Distances between adjacent images, `n - 1` values.
pub fn coherence_distances(images: &[&ImageArtifact], metric: &dyn ImageMetric) -> Result<Vec<f64>, EvalError> {
    if images.len() < 2 {
        return Err(EvalError::Validation(format!("coherence needs at least 2 images, got {}", images.len())));
    }
    images.windows(2).map(|w| metric.distance(w[0], w[1])).collect()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentText {
    Step,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_id: String,
    pub alignment: Vec<f64>,
    pub coherence: Vec<f64>,
    pub alignment_mean: f64,
    pub coherence_mean: f64,
    pub alignment_text: AlignmentText,
    pub config: ConfigSnapshot,
}

pub fn evaluate_sequence(
    task: &ManualTask,
    seq: &GeneratedSequence,
    scorer: &dyn AlignmentScorer,
    metric: &dyn ImageMetric,
    alignment_text: AlignmentText,
    scale: f64,
) -> Result<MetricReport, EvalError> {
    if seq.steps.len() != task.len() {
        return Err(EvalError::Validation(format!(
            "sequence {} has {} images for {} steps",
            seq.task_id,
            seq.steps.len(),
            task.len()
        )));
    }
    let alignment = seq
        .steps
        .iter()
        .map(|r| {
            let t = match alignment_text {
                AlignmentText::Step => &task.steps[r.step_index - 1].text,
                AlignmentText::Caption => &r.caption.text,
            };
            alignment_score(t, &r.image, scorer, scale)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let coherence = coherence_distances(&seq.images(), metric)?;
    Ok(MetricReport {
        task_id: seq.task_id.clone(),
        alignment_mean: mean(&alignment).unwrap_or(0.0),
        coherence_mean: mean(&coherence).unwrap_or(0.0),
        alignment,
        coherence,
        alignment_text,
        config: seq.config.clone(),
    })
}

/// `task_id,strategy,alignment_mean,coherence_mean`, one row per report.
pub fn write_summary_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_id", "strategy", "alignment_mean", "coherence_mean"])?;
    for r in reports {
        w.write_record([
            r.task_id.clone(),
            r.config.strategy.to_string(),
            format!("{:.6}", r.alignment_mean),
            format!("{:.6}", r.coherence_mean),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        round2(100.0 * count as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationTaskType {
    RankBest3,
    Pairwise,
    Likert,
}

impl AnnotationTaskType {
    /// Number of sequences shown per job.
    pub fn arity(self) -> usize {
        match self {
            Self::RankBest3 => 5,
            Self::Pairwise => 2,
            Self::Likert => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RankBest3 => "rank_best3",
            Self::Pairwise => "pairwise",
            Self::Likert => "likert",
        }
    }
}

impl std::str::FromStr for AnnotationTaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rank_best3" | "rank" => Ok(Self::RankBest3),
            "pairwise" => Ok(Self::Pairwise),
            "likert" => Ok(Self::Likert),
            other => Err(format!("unknown annotation type `{other}`")),
        }
    }
}

/// Annotator verdict with method identities resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Verdict {
    /// Best, second and third, by method id.
    RankBest3 { ranking: Vec<String> },
    /// `None` is a tie.
    Pairwise { winner: Option<String> },
    Likert { rating: u8 },
}

impl Verdict {
    pub fn task_type(&self) -> AnnotationTaskType {
        match self {
            Self::RankBest3 { .. } => AnnotationTaskType::RankBest3,
            Self::Pairwise { .. } => AnnotationTaskType::Pairwise,
            Self::Likert { .. } => AnnotationTaskType::Likert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub job_id: String,
    pub job_set: String,
    pub annotator_id: String,
    pub task_type: AnnotationTaskType,
    /// Methods shown in the job, in presentation order.
    pub methods: Vec<String>,
    /// Absent exactly when `no_good` is set.
    pub verdict: Option<Verdict>,
    pub no_good: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Validation(format!("record {}: {m}", self.record_id)));
        match (&self.verdict, self.no_good) {
            (Some(_), true) => return bad("no_good records carry no verdict".into()),
            (None, false) => return bad("missing verdict".into()),
            (None, true) => return Ok(()),
            (Some(v), false) if v.task_type() != self.task_type => {
                return bad(format!("{} verdict on a {} job", v.task_type().as_str(), self.task_type.as_str()))
            }
            _ => {}
        }
        let shown = |m: &String| self.methods.contains(m);
        match self.verdict.as_ref().expect("checked above") {
            Verdict::RankBest3 { ranking } => {
                if ranking.len() != 3 || ranking.iter().collect::<BTreeSet<_>>().len() != 3 {
                    return bad("ranking must name 3 distinct sequences".into());
                }
                if !ranking.iter().all(shown) {
                    return bad("ranking names a sequence outside the job".into());
                }
            }
            Verdict::Pairwise { winner: Some(w) } if !shown(w) => {
                return bad("winner is not part of the job".into());
            }
            Verdict::Pairwise { .. } => {}
            Verdict::Likert { rating } if !(1..=5).contains(rating) => {
                return bad(format!("rating {rating} outside 1..5"));
            }
            Verdict::Likert { .. } => {}
        }
        Ok(())
    }
}

fn check_type(records: &[AnnotationRecord], want: AnnotationTaskType) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::Validation("no annotation records".into()));
    }
    for r in records {
        if r.task_type != want {
            return Err(EvalError::Validation(format!(
                "record {} is {}, expected {}",
                r.record_id,
                r.task_type.as_str(),
                want.as_str()
            )));
        }
        r.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub total: usize,
    pub no_good: usize,
    /// Percentage of records excluded as no good.
    pub no_good_share: f64,
    pub best: BTreeMap<String, f64>,
    pub second: BTreeMap<String, f64>,
    pub third: BTreeMap<String, f64>,
}

/// Per-method best/second/third shares over the records not marked no good.
pub fn aggregate_rank_annotations(records: &[AnnotationRecord]) -> Result<RankSummary, EvalError> {
    check_type(records, AnnotationTaskType::RankBest3)?;
    let valid: Vec<&Vec<String>> = records
        .iter()
        .filter_map(|r| match &r.verdict {
            Some(Verdict::RankBest3 { ranking }) => Some(ranking),
            _ => None,
        })
        .collect();
    let no_good = records.len() - valid.len();
    let methods: BTreeSet<&String> =
        records.iter().filter(|r| !r.no_good).flat_map(|r| r.methods.iter()).collect();
    let shares = |pos: usize| -> BTreeMap<String, f64> {
        methods
            .iter()
            .map(|m| (m.to_string(), pct(valid.iter().filter(|r| &r[pos] == *m).count(), valid.len())))
            .collect()
    };
    Ok(RankSummary {
        total: records.len(),
        no_good,
        no_good_share: pct(no_good, records.len()),
        best: shares(0),
        second: shares(1),
        third: shares(2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSummary {
    pub method_a: String,
    pub total: usize,
    pub win_a: f64,
    pub win_b: f64,
    pub tie: f64,
    pub no_good: f64,
}

/// Outcome shares over all records; no good is its own outcome.
pub fn aggregate_pairwise(records: &[AnnotationRecord], method_a: &str) -> Result<PairwiseSummary, EvalError> {
    check_type(records, AnnotationTaskType::Pairwise)?;
    let (mut a, mut b, mut tie, mut ng) = (0, 0, 0, 0);
    for r in records {
        match &r.verdict {
            None => ng += 1,
            Some(Verdict::Pairwise { winner: None }) => tie += 1,
            Some(Verdict::Pairwise { winner: Some(w) }) if w == method_a => a += 1,
            Some(_) => b += 1,
        }
    }
    let n = records.len();
    Ok(PairwiseSummary {
        method_a: method_a.to_string(),
        total: n,
        win_a: pct(a, n),
        win_b: pct(b, n),
        tie: pct(tie, n),
        no_good: pct(ng, n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertStat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single rating.
    pub std: f64,
}

pub fn likert_stat(ratings: &[f64]) -> Option<LikertStat> {
    let m = mean(ratings)?;
    let n = ratings.len();
    let std = if n < 2 {
        0.0
    } else {
        (ratings.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(LikertStat { n, mean: m, std })
}

/// Mean and sample std of ratings per method; methods without ratings are
/// left out.
pub fn aggregate_likert(records: &[AnnotationRecord]) -> Result<BTreeMap<String, LikertStat>, EvalError> {
    check_type(records, AnnotationTaskType::Likert)?;
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(Verdict::Likert { rating }) = &r.verdict {
            let method = r
                .methods
                .first()
                .ok_or_else(|| EvalError::Validation(format!("record {} shows no method", r.record_id)))?;
            by_method.entry(method.clone()).or_default().push(f64::from(*rating));
        }
    }
    Ok(by_method.into_iter().filter_map(|(m, rs)| likert_stat(&rs).map(|s| (m, s))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Hallucination,
    ComplexStep,
    CopiedInput,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 3] = [Self::Hallucination, Self::ComplexStep, Self::CopiedInput];
}

impl std::str::FromStr for ErrorCategory {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "hallucination" => Ok(Self::Hallucination),
            "complex_step" => Ok(Self::ComplexStep),
            "copied_input" => Ok(Self::CopiedInput),
            other => Err(EvalError::Validation(format!("unknown error category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub total: usize,
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub shares: BTreeMap<ErrorCategory, f64>,
}

pub fn tally_error_types<S: AsRef<str>>(labels: &[S], total: usize) -> Result<ErrorTally, EvalError> {
    if labels.len() > total {
        return Err(EvalError::Validation(format!("{} labels exceed total {total}", labels.len())));
    }
    let mut counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for l in labels {
        *counts.entry(l.as_ref().parse()?).or_default() += 1;
    }
    let shares = counts.iter().map(|(c, n)| (*c, pct(*n, total))).collect();
    Ok(ErrorTally { total, counts, shares })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DiffusionBackend, ImagePayload, RenderMode, ToyConfig};

    fn img(v: &[f64]) -> ImageArtifact {
        ImageArtifact { step_index: 1, payload: ImagePayload::Latent { values: v.to_vec() }, renderer_id: "t".into() }
    }

    struct Fixed(f64);
    impl AlignmentScorer for Fixed {
        fn cosine(&self, _: &str, _: &ImageArtifact) -> Result<f64, EvalError> {
            Ok(self.0)
        }
    }

    fn rec(i: usize, task_type: AnnotationTaskType, methods: &[&str], verdict: Option<Verdict>) -> AnnotationRecord {
        AnnotationRecord {
            record_id: format!("r{i}"),
            job_id: format!("j{i}"),
            job_set: "s".into(),
            annotator_id: "a".into(),
            task_type,
            methods: methods.iter().map(|m| m.to_string()).collect(),
            no_good: verdict.is_none(),
            verdict,
            feedback: None,
            timestamp: 0,
        }
    }

    #[test]
    fn alignment_clamps() {
        let i = img(&[1.0]);
        assert_eq!(alignment_score("x", &i, &Fixed(0.0), 100.0).unwrap(), 0.0);
        assert_eq!(alignment_score("x", &i, &Fixed(-0.4), 100.0).unwrap(), 0.0);
        assert_eq!(alignment_score("x", &i, &Fixed(0.25), 100.0).unwrap(), 25.0);
    }

    #[test]
    fn toy_alignment_near_full_after_contraction() {
        let b = ToyBackend::new(ToyConfig::default()).unwrap();
        let c = b.embed_text("stir the soup").unwrap();
        let g = b.target(&c.vector).unwrap();
        let tr = b.run_to_target(1, &b.noise_latent(1), &g, 50, 0, "").unwrap();
        let image = b.decode_latent(tr.final_latent(), 1, RenderMode::Identity).unwrap();
        let s = alignment_score("stir the soup", &image, &ToyAlignmentScorer { backend: &b }, 100.0).unwrap();
        assert!(s > 99.0 && s <= 100.0 + 1e-9, "{s}");
        let exact = b.decode_latent(&g, 1, RenderMode::Identity).unwrap();
        let s = alignment_score("soup the stir", &exact, &ToyAlignmentScorer { backend: &b }, 100.0).unwrap();
        assert!((s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn toy_metric_basics() {
        let a = img(&[0.0, 0.0, 0.0, 0.0]);
        let b = img(&[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(ToyImageMetric.distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ToyImageMetric.distance(&a, &b).unwrap(), 2.0);
        assert!(coherence_distances(&[&a], &ToyImageMetric).is_err());
        assert_eq!(coherence_distances(&[&a, &b, &a], &ToyImageMetric).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn single_rank_record() {
        let r = rec(
            1,
            AnnotationTaskType::RankBest3,
            &["A", "B", "C", "D", "E"],
            Some(Verdict::RankBest3 { ranking: vec!["A".into(), "B".into(), "C".into()] }),
        );
        let s = aggregate_rank_annotations(&[r]).unwrap();
        assert_eq!(s.best["A"], 100.0);
        assert_eq!(s.second["B"], 100.0);
        assert_eq!(s.third["C"], 100.0);
        assert_eq!(s.best["D"], 0.0);
    }

    #[test]
    fn all_no_good_rank() {
        let rs: Vec<_> = (0..3).map(|i| rec(i, AnnotationTaskType::RankBest3, &["A"], None)).collect();
        let s = aggregate_rank_annotations(&rs).unwrap();
        assert_eq!(s.no_good_share, 100.0);
        assert!(s.best.is_empty() && s.second.is_empty() && s.third.is_empty());
        assert!(aggregate_rank_annotations(&[]).is_err());
    }

    #[test]
    fn pairwise_all_ties() {
        let rs: Vec<_> = (0..4)
            .map(|i| rec(i, AnnotationTaskType::Pairwise, &["A", "B"], Some(Verdict::Pairwise { winner: None })))
            .collect();
        let s = aggregate_pairwise(&rs, "A").unwrap();
        assert_eq!((s.win_a, s.win_b, s.tie, s.no_good), (0.0, 0.0, 100.0, 0.0));
    }

    #[test]
    fn likert_small_fixtures() {
        let st = likert_stat(&[3.0, 3.0, 2.0]).unwrap();
        assert_eq!((round2(st.mean), round2(st.std)), (2.67, 0.58));
        let st = likert_stat(&[5.0]).unwrap();
        assert_eq!((st.mean, st.std), (5.0, 0.0));
        let st = likert_stat(&[1.0, 5.0]).unwrap();
        assert_eq!((round2(st.mean), round2(st.std)), (3.0, 2.83));
        assert!(likert_stat(&[]).is_none());
    }

    #[test]
    fn likert_absent_method_not_zero() {
        let rs = vec![
            rec(1, AnnotationTaskType::Likert, &["ours"], Some(Verdict::Likert { rating: 4 })),
            rec(2, AnnotationTaskType::Likert, &["gt"], None),
        ];
        let m = aggregate_likert(&rs).unwrap();
        assert!(m.contains_key("ours") && !m.contains_key("gt"));
    }

    #[test]
    fn record_validation() {
        let mut r = rec(1, AnnotationTaskType::Likert, &["x"], Some(Verdict::Likert { rating: 6 }));
        assert!(r.validate().is_err());
        r.verdict = Some(Verdict::Likert { rating: 5 });
        r.validate().unwrap();
        r.no_good = true;
        assert!(r.validate().is_err());
        let dup = rec(
            2,
            AnnotationTaskType::RankBest3,
            &["A", "B", "C"],
            Some(Verdict::RankBest3 { ranking: vec!["A".into(), "A".into(), "C".into()] }),
        );
        assert!(dup.validate().is_err());
    }

    #[test]
    fn error_tally_edges() {
        let t = tally_error_types::<&str>(&[], 10).unwrap();
        assert!(t.shares.values().all(|s| *s == 0.0));
        let t = tally_error_types(&["hallucination", "complex_step", "copied_input"], 3).unwrap();
        assert!(t.shares.values().all(|s| *s == 33.33));
        assert!(tally_error_types(&["typo"], 3).is_err());
        assert!(tally_error_types(&["hallucination", "hallucination"], 1).is_err());
    }

    #[test]
    fn summary_csv_header() {
        let mut buf = Vec::new();
        write_summary_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "task_id,strategy,alignment_mean,coherence_mean\n");
    }
}
