use std::sync::OnceLock;

use proptest::prelude::*;

use stepvis::diffusion::{ImageArtifact, ImagePayload, ToyBackend, ToyConfig};
use stepvis::evaluation::{
    aggregate_pairwise, aggregate_rank_annotations, alignment_score, coherence_distances, mean, AnnotationRecord,
    AnnotationTaskType, ToyAlignmentScorer, ToyImageMetric, Verdict,
};

fn backend() -> &'static ToyBackend {
    static B: OnceLock<ToyBackend> = OnceLock::new();
    B.get_or_init(|| ToyBackend::new(ToyConfig::default()).unwrap())
}

fn image(step: usize, values: Vec<f64>) -> ImageArtifact {
    ImageArtifact { step_index: step, payload: ImagePayload::Latent { values }, renderer_id: "toy".into() }
}

fn pairwise(n: usize, outcome: u8) -> AnnotationRecord {
    let verdict = match outcome {
        0 => Some(Verdict::Pairwise { winner: Some("a".into()) }),
        1 => Some(Verdict::Pairwise { winner: Some("b".into()) }),
        2 => Some(Verdict::Pairwise { winner: None }),
        _ => None,
    };
    AnnotationRecord {
        record_id: format!("r{n}"),
        job_id: format!("j{n}"),
        job_set: "p".into(),
        annotator_id: "x".into(),
        task_type: AnnotationTaskType::Pairwise,
        methods: vec!["a".into(), "b".into()],
        no_good: verdict.is_none(),
        verdict,
        feedback: None,
        timestamp: 0,
    }
}

const METHODS: [&str; 5] = ["m0", "m1", "m2", "m3", "m4"];

fn rank(n: usize, perm: &[usize]) -> AnnotationRecord {
    AnnotationRecord {
        record_id: format!("r{n}"),
        job_id: format!("j{n}"),
        job_set: "r".into(),
        annotator_id: "x".into(),
        task_type: AnnotationTaskType::RankBest3,
        methods: METHODS.iter().map(|m| m.to_string()).collect(),
        no_good: false,
        verdict: Some(Verdict::RankBest3 { ranking: perm[..3].iter().map(|&i| METHODS[i].to_string()).collect() }),
        feedback: None,
        timestamp: 0,
    }
}

proptest! {
    #[test]
    fn pairwise_shares_sum_to_100(outcomes in prop::collection::vec(0u8..4, 1..200)) {
        let recs: Vec<_> = outcomes.iter().enumerate().map(|(n, o)| pairwise(n, *o)).collect();
        let s = aggregate_pairwise(&recs, "a").unwrap();
        let total = s.win_a + s.win_b + s.tie + s.no_good;
        prop_assert!((total - 100.0).abs() <= 0.02 + 1e-9, "{total}");
    }

    #[test]
    fn rank_shares_sum_to_100(perms in prop::collection::vec(Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), 1..100)) {
        let recs: Vec<_> = perms.iter().enumerate().map(|(n, p)| rank(n, p)).collect();
        let s = aggregate_rank_annotations(&recs).unwrap();
        for shares in [&s.best, &s.second, &s.third] {
            let total: f64 = shares.values().sum();
            prop_assert!((total - 100.0).abs() <= 0.02 + 1e-9, "{total}");
        }
    }

    #[test]
    fn coherence_mean_survives_reversal(seq in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 16), 2..7)) {
        let imgs: Vec<ImageArtifact> = seq.iter().enumerate().map(|(i, v)| image(i + 1, v.clone())).collect();
        let fwd: Vec<&ImageArtifact> = imgs.iter().collect();
        let rev: Vec<&ImageArtifact> = imgs.iter().rev().collect();
        let a = coherence_distances(&fwd, &ToyImageMetric).unwrap();
        let b = coherence_distances(&rev, &ToyImageMetric).unwrap();
        prop_assert_eq!(a.len(), imgs.len() - 1);
        prop_assert!((mean(&a).unwrap() - mean(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn alignment_ignores_caption_token_order(
        words in prop::collection::vec("[a-z]{2,8}", 1..10),
        values in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let scorer = ToyAlignmentScorer { backend: backend() };
        let img = image(1, values);
        let mut rev = words.clone();
        rev.reverse();
        let a = alignment_score(&words.join(" "), &img, &scorer, 100.0).unwrap();
        let b = alignment_score(&rev.join(" "), &img, &scorer, 100.0).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn identical_images_have_zero_distance() {
    let img = image(1, vec![0.5; 16]);
    assert_eq!(coherence_distances(&[&img, &img], &ToyImageMetric).unwrap(), vec![0.0]);
    assert!(coherence_distances(&[&img], &ToyImageMetric).is_err());
}
