//! Sampling, blinding, unblinding and aggregation chained together.

use std::collections::{BTreeMap, BTreeSet};

use chrono::DateTime;
use proptest::prelude::*;
use revcorpus::corpus::{DatasetSplit, ReviewExample};
use revcorpus::evaluation::{
    aggregate_report, draw_sample, unblind, BlindedRecord, CommentCategory, FeedbackType, Judgment, SampleFrame,
};

fn test_split(n: u64) -> Vec<ReviewExample> {
    (1..=n)
        .map(|i| ReviewExample {
            repo: "acme/widgets".into(),
            pr_id: i,
            comment_id: 500 + i,
            reviewer: "carol".into(),
            created_at: DateTime::from_timestamp(1_600_000_000 + i as i64, 0),
            m_pre: format!("let v{i} = load();"),
            r_nl: format!("check v{i} for errors"),
            m_post: String::new(),
            language: "rust".into(),
            split: DatasetSplit::Test,
            experience: None,
        })
        .collect()
}

fn generated(models: usize, n: usize) -> BTreeMap<String, Vec<String>> {
    (0..models)
        .map(|m| {
            (
                format!("model-{m}"),
                (0..n).map(|i| format!("output {m}/{i}")).collect(),
            )
        })
        .collect()
}

/// Judges a comment from its text alone, as an annotator would.
fn judge(text: &str) -> Judgment {
    if text.starts_with("output 0/") {
        Judgment::applicable(true, FeedbackType::Concern, false, CommentCategory::Logical)
    } else {
        Judgment::not_applicable(false, false)
    }
}

fn annotate(frame: &SampleFrame) -> Vec<BlindedRecord> {
    frame
        .items
        .iter()
        .flat_map(|item| {
            item.comments.iter().map(move |c| BlindedRecord {
                sample_id: item.sample_id,
                alias: c.alias.clone(),
                annotator_id: "ann".into(),
                judgment: judge(&c.text),
                annotated_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            })
        })
        .collect()
}

#[test]
fn blinded_judgments_reach_the_right_model() {
    let test = test_split(30);
    let (frame, map) = draw_sample(&test, &generated(3, 30), 12, 8).unwrap();
    let text = frame.to_jsonl();
    assert!(!text.contains("model-"));
    let reloaded = SampleFrame::from_jsonl(&text).unwrap();
    assert_eq!(reloaded, frame);

    let records = unblind(&annotate(&reloaded), &map).unwrap();
    let report = aggregate_report(&records, None).unwrap();
    assert_eq!(report.models["model-0"].applicable, 12);
    assert_eq!(report.models["model-0"].feedback_count(FeedbackType::Concern), 12);
    assert_eq!(report.models["model-1"].applicable, 0);
    assert_eq!(report.models["model-2"].semantically_equivalent, 0);
}

proptest! {
    #[test]
    fn every_sampled_comment_is_judged_once(pop in 1u64..60, frac in 0.0f64..=1.0, models in 1usize..5, seed: u64) {
        let test = test_split(pop);
        let n = (pop as f64 * frac) as usize;
        let (frame, map) = draw_sample(&test, &generated(models, pop as usize), n, seed).unwrap();
        prop_assert_eq!(frame.items.len(), n);
        let keys: BTreeSet<_> = frame.items.iter().map(|i| i.example.clone()).collect();
        prop_assert_eq!(keys.len(), n);

        let records = unblind(&annotate(&frame), &map).unwrap();
        let pairs: BTreeSet<_> = records.iter().map(|r| (r.sample_id, r.model_id.clone())).collect();
        prop_assert_eq!(pairs.len(), n * models);
        let report = aggregate_report(&records, None).unwrap();
        for m in report.models.values() {
            prop_assert_eq!(m.items, n);
        }
    }

    #[test]
    fn same_seed_same_frame(seed: u64) {
        let test = test_split(25);
        let g = generated(2, 25);
        let a = draw_sample(&test, &g, 10, seed).unwrap();
        let b = draw_sample(&test, &g, 10, seed).unwrap();
        prop_assert_eq!(a.0.frame_id(), b.0.frame_id());
        prop_assert_eq!(a.1, b.1);
    }
}
