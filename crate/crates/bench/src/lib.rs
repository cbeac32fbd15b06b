//! Fixtures shared by the benchmarks.

use stepvis::evaluation::{AnnotationRecord, AnnotationTaskType, Verdict};

pub const METHODS: [&str; 5] = ["proposed", "latent_fixed", "random_seed", "fixed_seed", "img2img"];

fn record(n: usize, task_type: AnnotationTaskType, methods: Vec<String>, verdict: Option<Verdict>) -> AnnotationRecord {
    AnnotationRecord {
        record_id: format!("r{n:06}"),
        job_id: format!("set-{n:04}"),
        job_set: "set".into(),
        annotator_id: format!("a{}", n % 7),
        task_type,
        methods,
        no_good: verdict.is_none(),
        verdict,
        feedback: None,
        timestamp: n as u64,
    }
}

/// `n` rank records cycling through the five methods, every tenth marked no good.
pub fn rank_records(n: usize) -> Vec<AnnotationRecord> {
    (0..n)
        .map(|k| {
            let methods: Vec<String> = (0..5).map(|i| METHODS[(k + i) % 5].to_string()).collect();
            let verdict = (k % 10 != 9).then(|| Verdict::RankBest3 { ranking: methods[..3].to_vec() });
            record(k, AnnotationTaskType::RankBest3, methods, verdict)
        })
        .collect()
}

/// `n` pairwise records of the first two methods with wins, losses and ties.
pub fn pairwise_records(n: usize) -> Vec<AnnotationRecord> {
    (0..n)
        .map(|k| {
            let methods = vec![METHODS[0].to_string(), METHODS[1].to_string()];
            let verdict = match k % 4 {
                0 | 1 => Some(Verdict::Pairwise { winner: Some(methods[0].clone()) }),
                2 => Some(Verdict::Pairwise { winner: None }),
                _ => None,
            };
            record(k, AnnotationTaskType::Pairwise, methods, verdict)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        for r in rank_records(20).iter().chain(&pairwise_records(20)) {
            r.validate().unwrap();
        }
    }
}
