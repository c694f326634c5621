//! Answer evaluation: Levenshtein distance, ANLS, 10-answer soft-voting
//! accuracy, and single-answer exact match.

use serde::{Deserialize, Serialize};

use crate::decode::Prediction;
use crate::error::{Error, Result};
use crate::features::ScenePack;

/// Lowercase and collapse whitespace runs; applied identically to
/// predictions and ground truths before any comparison.
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Edit distance (insertions + deletions + substitutions) over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein similarity against the best-matching ground truth,
/// truncated to 0 below 0.5. Comparison is case-insensitive and
/// whitespace-normalized; two empty strings are maximally similar.
pub fn anls(pred: &str, ground_truths: &[String]) -> Result<f64> {
    if ground_truths.is_empty() {
        return Err(Error::Validation("anls requires at least one ground truth".into()));
    }
    let pred = normalize_answer(pred);
    let mut best = 0.0f64;
    for gt in ground_truths {
        let gt = normalize_answer(gt);
        let sim = if pred.is_empty() && gt.is_empty() {
            1.0
        } else {
            let max_len = pred.chars().count().max(gt.chars().count());
            1.0 - levenshtein(&pred, &gt) as f64 / max_len as f64
        };
        best = best.max(sim);
    }
    Ok(if best < 0.5 { 0.0 } else { best })
}

/// Soft-voting accuracy over exactly 10 human answers: the average over the
/// 10 leave-one-out subsets of min(matches-in-subset / 3, 1).
pub fn vqa_soft_accuracy(pred: &str, ground_truths: &[String]) -> Result<f64> {
    if ground_truths.len() != 10 {
        return Err(Error::Validation(format!(
            "soft-voting accuracy requires exactly 10 ground truths, got {}",
            ground_truths.len()
        )));
    }
    let pred = normalize_answer(pred);
    let matches: Vec<bool> = ground_truths
        .iter()
        .map(|gt| normalize_answer(gt) == pred)
        .collect();
    let total: f64 = (0..10)
        .map(|left_out| {
            let count = matches
                .iter()
                .enumerate()
                .filter(|&(i, &m)| i != left_out && m)
                .count();
            (count as f64 / 3.0).min(1.0)
        })
        .sum();
    Ok(total / 10.0)
}

/// Exact match against any ground truth, after normalization.
pub fn exact_match(pred: &str, ground_truths: &[String]) -> f64 {
    let pred = normalize_answer(pred);
    f64::from(ground_truths.iter().any(|gt| normalize_answer(gt) == pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Anls,
    Vqa,
    Exact,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Anls => "anls",
            MetricKind::Vqa => "vqa",
            MetricKind::Exact => "exact",
        }
    }

    pub fn score(&self, pred: &str, ground_truths: &[String]) -> Result<f64> {
        match self {
            MetricKind::Anls => anls(pred, ground_truths),
            MetricKind::Vqa => vqa_soft_accuracy(pred, ground_truths),
            MetricKind::Exact => Ok(exact_match(pred, ground_truths)),
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anls" => Ok(MetricKind::Anls),
            "vqa" => Ok(MetricKind::Vqa),
            "exact" => Ok(MetricKind::Exact),
            other => Err(Error::Validation(format!(
                "unknown metric {other:?} (expected anls | vqa | exact)"
            ))),
        }
    }
}

/// Per-scene score entry of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub score: f64,
}

/// Aggregate evaluation output; per-id scores are sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub per_id: Vec<ScoredRecord>,
}

/// Score predictions against their scenes' ground-truth answers. Scenes
/// without a prediction score 0 with a warning; predictions whose id matches
/// no scene are a validation error.
pub fn evaluate_set(
    predictions: &[Prediction],
    scenes: &[ScenePack],
    metric: MetricKind,
) -> Result<EvalReport> {
    for p in predictions {
        if !scenes.iter().any(|s| s.id == p.id) {
            return Err(Error::Validation(format!(
                "prediction id {:?} matches no scene",
                p.id
            )));
        }
    }
    let mut per_id = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let score = match predictions.iter().find(|p| p.id == scene.id) {
            Some(p) => metric.score(&p.answer, &scene.answers)?,
            None => {
                log::warn!("scene {} has no prediction; scoring 0", scene.id);
                0.0
            }
        };
        per_id.push(ScoredRecord {
            id: scene.id.clone(),
            score,
        });
    }
    per_id.sort_by(|a, b| a.id.cmp(&b.id));
    let count = per_id.len();
    let mean = if count == 0 {
        0.0
    } else {
        per_id.iter().map(|r| r.score).sum::<f64>() / count as f64
    };
    Ok(EvalReport {
        metric: metric.name().to_string(),
        count,
        mean,
        per_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn levenshtein_known_values() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
    }

    #[test]
    fn anls_exact_match_is_one() {
        assert_eq!(anls("99", &gts(&["99"])).unwrap(), 1.0);
        assert_eq!(anls("Bud Light", &gts(&["bud  light"])).unwrap(), 1.0);
    }

    #[test]
    fn anls_partial_match_value() {
        // d_L("45th parallel", "45th parallel dr") = 3, max length 16.
        let score = anls("45th parallel", &gts(&["45th parallel dr"])).unwrap();
        assert!((score - 0.8125).abs() < 1e-12);
    }

    #[test]
    fn anls_truncates_below_half() {
        assert_eq!(anls("exit", &gts(&["bud light"])).unwrap(), 0.0);
        // boundary: similarity exactly 0.5 survives
        assert_eq!(anls("ab", &gts(&["ax"])).unwrap(), 0.5);
        // just below 0.5 truncates: d=5 on max len 9 -> 0.444...
        assert_eq!(anls("abcd", &gts(&["abcdeffff"])).unwrap(), 0.0);
    }

    #[test]
    fn anls_takes_best_ground_truth() {
        let score = anls("tokyo station", &gts(&["kyoto", "tokyo station"])).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn anls_of_empty_pair_is_one() {
        assert_eq!(anls("", &gts(&[""])).unwrap(), 1.0);
        assert_eq!(anls("", &gts(&["something"])).unwrap(), 0.0);
    }

    #[test]
    fn anls_requires_a_ground_truth() {
        assert!(anls("x", &[]).is_err());
    }

    #[test]
    fn soft_accuracy_all_matches() {
        assert_eq!(vqa_soft_accuracy("yes", &gts(&["yes"; 10])).unwrap(), 1.0);
    }

    #[test]
    fn soft_accuracy_three_of_ten_is_point_nine() {
        let mut answers = vec!["no".to_string(); 7];
        answers.extend(vec!["yes".to_string(); 3]);
        assert!((vqa_soft_accuracy("yes", &answers).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn soft_accuracy_zero_matches() {
        assert_eq!(vqa_soft_accuracy("maybe", &gts(&["no"; 10])).unwrap(), 0.0);
    }

    #[test]
    fn soft_accuracy_requires_ten_answers() {
        assert!(vqa_soft_accuracy("x", &gts(&["x"; 9])).is_err());
        assert!(vqa_soft_accuracy("x", &gts(&["x"; 11])).is_err());
    }

    fn scene_with_answers(id: &str, answers: &[&str]) -> ScenePack {
        ScenePack {
            id: id.into(),
            image_size: (10.0, 10.0),
            question: crate::features::Question::TokenIds(vec![]),
            objects: vec![],
            ocr: vec![],
            answers: gts(answers),
        }
    }

    fn pred(id: &str, answer: &str) -> Prediction {
        Prediction {
            id: id.into(),
            answer: answer.into(),
            components: vec![],
            steps_used: 1,
        }
    }

    #[test]
    fn evaluate_empty_set() {
        let report = evaluate_set(&[], &[], MetricKind::Anls).unwrap();
        assert_eq!(report.count, 0);
        assert_eq!(report.mean, 0.0);
    }

    #[test]
    fn evaluate_singleton_perfect() {
        let scenes = vec![scene_with_answers("a", &["99"])];
        let report = evaluate_set(&[pred("a", "99")], &scenes, MetricKind::Anls).unwrap();
        assert_eq!(report.count, 1);
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn evaluate_mean_over_records() {
        let scenes = vec![
            scene_with_answers("a", &["99"]),
            scene_with_answers("b", &["45th parallel dr"]),
        ];
        let preds = vec![pred("a", "99"), pred("b", "45th parallel")];
        let report = evaluate_set(&preds, &scenes, MetricKind::Anls).unwrap();
        assert!((report.mean - 0.90625).abs() < 1e-12);
        assert_eq!(report.per_id[0].id, "a");
        assert_eq!(report.per_id[1].id, "b");
    }

    #[test]
    fn missing_prediction_scores_zero() {
        let scenes = vec![
            scene_with_answers("a", &["99"]),
            scene_with_answers("b", &["5"]),
        ];
        let report = evaluate_set(&[pred("a", "99")], &scenes, MetricKind::Exact).unwrap();
        assert_eq!(report.mean, 0.5);
    }

    #[test]
    fn unresolvable_prediction_id_is_an_error() {
        let scenes = vec![scene_with_answers("a", &["99"])];
        assert!(evaluate_set(&[pred("ghost", "99")], &scenes, MetricKind::Exact).is_err());
    }

    proptest! {
        #[test]
        fn levenshtein_symmetric_and_triangle(
            a in "[a-c]{0,8}", b in "[a-c]{0,8}", c in "[a-c]{0,8}",
        ) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
            prop_assert!(levenshtein(&a, &b) <= levenshtein(&a, &c) + levenshtein(&c, &b));
        }

        #[test]
        fn anls_self_similarity_is_one(s in "[ -~]{0,12}") {
            prop_assert_eq!(anls(&s, std::slice::from_ref(&s)).unwrap(), 1.0);
        }

        #[test]
        fn anls_is_zero_or_at_least_half(a in "[a-d ]{0,10}", b in "[a-d ]{1,10}") {
            let v = anls(&a, &[b]).unwrap();
            prop_assert!(v == 0.0 || (0.5..=1.0).contains(&v));
        }

        #[test]
        fn anls_symmetric_for_single_ground_truth(a in "[a-d]{0,10}", b in "[a-d]{0,10}") {
            prop_assert_eq!(
                anls(&a, std::slice::from_ref(&b)).unwrap(),
                anls(&b, std::slice::from_ref(&a)).unwrap()
            );
        }

        #[test]
        fn soft_accuracy_is_monotone_in_matches(k in 0usize..=10) {
            let mut answers = vec!["other".to_string(); 10 - k];
            answers.extend(vec!["hit".to_string(); k]);
            let v = vqa_soft_accuracy("hit", &answers).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            if k > 0 {
                let mut fewer = vec!["other".to_string(); 10 - (k - 1)];
                fewer.extend(vec!["hit".to_string(); k - 1]);
                prop_assert!(v >= vqa_soft_accuracy("hit", &fewer).unwrap());
            }
        }
    }
}
