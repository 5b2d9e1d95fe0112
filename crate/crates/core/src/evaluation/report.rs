//! Aggregation of final (adjudicated) annotations into results tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::annotation::{AnnotationRecord, CommentCategory, FeedbackType, JudgmentError};
use super::bleu::Partition;
use crate::experience::ExperienceClass;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("more than one final record for sample ids {0:?}; adjudicate first")]
    Unadjudicated(Vec<u32>),
    #[error("sample {sample_id}, model {model_id}: {source}")]
    Invalid {
        sample_id: u32,
        model_id: String,
        source: JudgmentError,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SeCount {
    pub equivalent: usize,
    pub judged: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModelReport {
    pub items: usize,
    pub semantically_equivalent: usize,
    pub applicable: usize,
    /// Over applicable items only; absent types have no entry.
    pub feedback: BTreeMap<FeedbackType, usize>,
    /// Applicable items whose comment explains itself.
    pub explanation: usize,
    /// Over applicable items only; absent categories have no entry.
    pub categories: BTreeMap<CommentCategory, usize>,
    /// Only populated when quadrants are supplied.
    pub se_by_partition: BTreeMap<Partition, SeCount>,
}

impl ModelReport {
    pub fn feedback_count(&self, t: FeedbackType) -> usize {
        self.feedback.get(&t).copied().unwrap_or(0)
    }

    pub fn category_count(&self, c: CommentCategory) -> usize {
        self.categories.get(&c).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportBundle {
    pub models: BTreeMap<String, ModelReport>,
}

/// `quadrants` maps sample ids to the reference author's quadrant.
pub fn aggregate_report(
    records: &[AnnotationRecord],
    quadrants: Option<&BTreeMap<u32, ExperienceClass>>,
) -> Result<ReportBundle, ReportError> {
    let mut seen = BTreeSet::new();
    let mut duplicated = BTreeSet::new();
    for r in records {
        if !seen.insert((r.sample_id, r.model_id.as_str())) {
            duplicated.insert(r.sample_id);
        }
    }
    if !duplicated.is_empty() {
        return Err(ReportError::Unadjudicated(duplicated.into_iter().collect()));
    }
    let mut models: BTreeMap<String, ModelReport> = BTreeMap::new();
    for r in records {
        r.validate().map_err(|source| ReportError::Invalid {
            sample_id: r.sample_id,
            model_id: r.model_id.clone(),
            source,
        })?;
        let m = models.entry(r.model_id.clone()).or_default();
        let j = &r.judgment;
        m.items += 1;
        m.semantically_equivalent += usize::from(j.semantic_equivalence);
        if j.applicability {
            m.applicable += 1;
            m.explanation += usize::from(j.has_explanation);
            if let Some(t) = j.feedback_type {
                *m.feedback.entry(t).or_default() += 1;
            }
            if let Some(c) = j.category {
                *m.categories.entry(c).or_default() += 1;
            }
        }
        if let Some(class) = quadrants.and_then(|q| q.get(&r.sample_id)) {
            for p in Partition::ALL {
                if p.contains(*class) {
                    let se = m.se_by_partition.entry(p).or_default();
                    se.judged += 1;
                    se.equivalent += usize::from(j.semantic_equivalence);
                }
            }
        }
    }
    Ok(ReportBundle { models })
}

impl ReportBundle {
    /// `metric,<model>...` with applicability, the feedback types and explanation.
    pub fn rq2_csv(&self) -> String {
        let mut out = String::from("metric");
        for name in self.models.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        let mut row = |label: &str, f: &dyn Fn(&ModelReport) -> usize| {
            out.push_str(label);
            for m in self.models.values() {
                out.push_str(&format!(",{}", f(m)));
            }
            out.push('\n');
        };
        row("applicability", &|m| m.applicable);
        for t in FeedbackType::ALL {
            row(t.code(), &|m| m.feedback_count(t));
        }
        row("explanation", &|m| m.explanation);
        out
    }

    /// `model,partition,semantically_equivalent,judged`. Without quadrants only `all` rows.
    pub fn rq1_se_csv(&self) -> String {
        let mut out = String::from("model,partition,semantically_equivalent,judged\n");
        for (name, m) in &self.models {
            if m.se_by_partition.is_empty() {
                out.push_str(&format!("{name},all,{},{}\n", m.semantically_equivalent, m.items));
                continue;
            }
            for p in Partition::ALL {
                let se = m.se_by_partition.get(&p).cloned().unwrap_or_default();
                out.push_str(&format!("{name},{},{},{}\n", p.as_str(), se.equivalent, se.judged));
            }
        }
        out
    }

    /// Long format, one row per non-zero (model, category).
    pub fn categories_csv(&self) -> String {
        let mut out = String::from("model,category,count\n");
        for (name, m) in &self.models {
            for (c, n) in &m.categories {
                out.push_str(&format!("{name},{},{n}\n", c.code()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::annotation::Judgment;
    use proptest::prelude::*;

    fn rec(sample_id: u32, model: &str, judgment: Judgment) -> AnnotationRecord {
        AnnotationRecord {
            sample_id,
            annotator_id: "a".into(),
            model_id: model.into(),
            judgment,
            annotated_at: "2024-05-01T00:00:00Z".parse().unwrap(),
        }
    }

    /// Builds a 100-item column with the given feedback split among applicable items.
    fn column(
        model: &str,
        suggestion: usize,
        concern: usize,
        confused: usize,
        explained: usize,
    ) -> Vec<AnnotationRecord> {
        let mut out = Vec::new();
        let mut id = 1;
        for (t, n) in [
            (FeedbackType::Suggestion, suggestion),
            (FeedbackType::Concern, concern),
            (FeedbackType::ConfusedQuestion, confused),
        ] {
            for _ in 0..n {
                let j = Judgment::applicable(
                    false,
                    t,
                    id as usize <= explained,
                    CommentCategory::ALL[id as usize % 18],
                );
                out.push(rec(id, model, j));
                id += 1;
            }
        }
        while id <= 100 {
            out.push(rec(id, model, Judgment::not_applicable(false, false)));
            id += 1;
        }
        out
    }

    #[test]
    fn published_feedback_columns_sum_to_applicability() {
        // (model, applicability, suggestion, concern, confused question)
        let table = [
            ("gt", 100, 77, 20, 3),
            ("original", 40, 22, 12, 6),
            ("mrma", 43, 32, 7, 4),
            ("mr", 43, 34, 8, 1),
            ("ma", 45, 32, 11, 2),
        ];
        let mut records = Vec::new();
        for (m, _, s, c, q) in table {
            records.extend(column(m, s, c, q, 0));
        }
        let bundle = aggregate_report(&records, None).unwrap();
        for (m, applicable, s, c, q) in table {
            let r = &bundle.models[m];
            assert_eq!(r.applicable, applicable, "{m}");
            assert_eq!(r.feedback_count(FeedbackType::Suggestion), s);
            assert_eq!(r.feedback_count(FeedbackType::Concern), c);
            assert_eq!(r.feedback_count(FeedbackType::ConfusedQuestion), q);
        }
        assert!(bundle.rq2_csv().contains("\napplicability,100,45,43,43,40\n"));
    }

    #[test]
    fn exact_counts_from_small_fixture() {
        let records = vec![
            rec(
                1,
                "m",
                Judgment::applicable(true, FeedbackType::Concern, true, CommentCategory::Logical),
            ),
            rec(
                2,
                "m",
                Judgment::applicable(false, FeedbackType::Concern, false, CommentCategory::Logical),
            ),
            rec(
                3,
                "m",
                Judgment::applicable(true, FeedbackType::Suggestion, true, CommentCategory::Resource),
            ),
            rec(4, "m", Judgment::not_applicable(true, true)),
        ];
        let q = BTreeMap::from([
            (1, ExperienceClass::MAJOR_REVIEWER_MAJOR_AUTHOR),
            (2, ExperienceClass::MAJOR_REVIEWER_MINOR_AUTHOR),
            (3, ExperienceClass::MINOR_REVIEWER_MAJOR_AUTHOR),
            (4, ExperienceClass::MINOR_REVIEWER_MINOR_AUTHOR),
        ]);
        let b = aggregate_report(&records, Some(&q)).unwrap();
        let m = &b.models["m"];
        assert_eq!(
            (m.items, m.semantically_equivalent, m.applicable, m.explanation),
            (4, 3, 3, 2)
        );
        assert_eq!(m.category_count(CommentCategory::Logical), 2);
        assert_eq!(m.category_count(CommentCategory::Praise), 0);
        assert_eq!(
            m.se_by_partition[&Partition::All],
            SeCount {
                equivalent: 3,
                judged: 4
            }
        );
        assert_eq!(
            m.se_by_partition[&Partition::Mrma],
            SeCount {
                equivalent: 1,
                judged: 1
            }
        );
        assert_eq!(
            m.se_by_partition[&Partition::Mr],
            SeCount {
                equivalent: 1,
                judged: 2
            }
        );
        assert_eq!(
            m.se_by_partition[&Partition::Ma],
            SeCount {
                equivalent: 2,
                judged: 2
            }
        );
        assert_eq!(b.categories_csv(), "model,category,count\nm,logical,2\nm,resource,1\n");
        assert!(b.rq1_se_csv().contains("m,mr,1,2\n"));
    }

    #[test]
    fn zero_applicable_gives_empty_tables() {
        let records: Vec<_> = (1..=5)
            .map(|i| rec(i, "m", Judgment::not_applicable(false, true)))
            .collect();
        let b = aggregate_report(&records, None).unwrap();
        let m = &b.models["m"];
        assert_eq!((m.applicable, m.explanation), (0, 0));
        assert!(m.feedback.is_empty() && m.categories.is_empty());
        assert_eq!(b.categories_csv(), "model,category,count\n");
    }

    #[test]
    fn duplicates_are_listed() {
        let j = Judgment::not_applicable(false, false);
        let records = vec![
            rec(7, "m", j),
            rec(7, "m", j),
            rec(2, "m", j),
            rec(2, "n", j),
            rec(3, "n", j),
            rec(3, "n", j),
        ];
        assert_eq!(
            aggregate_report(&records, None),
            Err(ReportError::Unadjudicated(vec![3, 7]))
        );
    }

    #[test]
    fn invalid_record_rejected() {
        let mut j = Judgment::not_applicable(false, false);
        j.category = Some(CommentCategory::Others);
        assert!(matches!(
            aggregate_report(&[rec(1, "m", j)], None),
            Err(ReportError::Invalid { sample_id: 1, .. })
        ));
    }

    fn judgment() -> impl Strategy<Value = Judgment> {
        (any::<bool>(), any::<bool>(), any::<bool>(), 0usize..3, 0usize..18).prop_map(|(se, app, ex, t, c)| {
            if app {
                Judgment::applicable(se, FeedbackType::ALL[t], ex, CommentCategory::ALL[c])
            } else {
                Judgment::not_applicable(se, ex)
            }
        })
    }

    proptest! {
        #[test]
        fn column_sums_match_applicability(js in proptest::collection::vec((0usize..3, judgment()), 0..80)) {
            let models = ["a", "b", "c"];
            let records: Vec<_> = js.iter().enumerate().map(|(i, (m, j))| rec(i as u32, models[*m], *j)).collect();
            let b = aggregate_report(&records, None).unwrap();
            for m in b.models.values() {
                prop_assert_eq!(m.feedback.values().sum::<usize>(), m.applicable);
                prop_assert_eq!(m.categories.values().sum::<usize>(), m.applicable);
                prop_assert!(m.explanation <= m.applicable);
            }
        }
    }
}
