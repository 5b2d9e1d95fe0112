//! Sentence-level BLEU-4 with add-one smoothing, averaged over a corpus.
//!
//! For each order n in 1..=4 the clipped n-gram precision is
//! `matches / total`; when `matches` is zero it becomes
//! `1 / (total + 1)`. The brevity penalty is `exp(1 - |ref| / |hyp|)` for
//! hypotheses shorter than the reference. An empty hypothesis scores 0.

use std::collections::HashMap;

use serde::Serialize;

use crate::experience::{ExperienceClass, TargetClass};

/// Lowercased maximal alphanumeric runs and single punctuation symbols.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuScore {
    /// In [0, 100].
    pub value: f64,
    /// Smoothed precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
}

impl BleuScore {
    fn zero() -> Self {
        Self {
            value: 0.0,
            precisions: [0.0; 4],
            brevity_penalty: 0.0,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu4<T: AsRef<str>>(hypothesis: &[T], reference: &[T]) -> BleuScore {
    if hypothesis.is_empty() {
        return BleuScore::zero();
    }
    let mut precisions = [0.0; 4];
    let mut log_sum = 0.0;
    for (i, p) in precisions.iter_mut().enumerate() {
        let n = i + 1;
        let hyp = ngram_counts(hypothesis, n);
        let reference = ngram_counts(reference, n);
        let total = hypothesis.len().saturating_sub(n - 1);
        let matched: usize = hyp
            .iter()
            .map(|(gram, &count)| count.min(reference.get(gram).copied().unwrap_or(0)))
            .sum();
        *p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let (h, r) = (hypothesis.len() as f64, reference.len() as f64);
    let brevity_penalty = if h < r { (1.0 - r / h).exp() } else { 1.0 };
    BleuScore {
        value: 100.0 * brevity_penalty * (log_sum / 4.0).exp(),
        precisions,
        brevity_penalty,
    }
}

pub fn bleu4_text(hypothesis: &str, reference: &str) -> BleuScore {
    bleu4(&tokenize(hypothesis), &tokenize(reference))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot average BLEU over an empty set of pairs")]
pub struct EmptyCorpus;

/// Mean of sentence-level BLEU-4 over `(hypothesis, reference)` text pairs.
pub fn corpus_bleu4<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<f64, EmptyCorpus> {
    if pairs.is_empty() {
        return Err(EmptyCorpus);
    }
    let sum: f64 = pairs
        .iter()
        .map(|(h, r)| bleu4_text(h.as_ref(), r.as_ref()).value)
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Result rows keyed the way the results table is: everyone, then the
/// three overlapping experienced-reviewer partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    All,
    Mrma,
    Mr,
    Ma,
}

impl Partition {
    pub const ALL: [Partition; 4] = [Partition::All, Partition::Mrma, Partition::Mr, Partition::Ma];

    pub fn contains(self, class: ExperienceClass) -> bool {
        match self {
            Partition::All => true,
            Partition::Mrma => crate::experience::in_target(class, TargetClass::Mrma),
            Partition::Mr => crate::experience::in_target(class, TargetClass::Mr),
            Partition::Ma => crate::experience::in_target(class, TargetClass::Ma),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::All => "all",
            Partition::Mrma => "mrma",
            Partition::Mr => "mr",
            Partition::Ma => "ma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRow {
    pub partition: Partition,
    pub count: usize,
    /// Mean sentence BLEU-4; `None` for an empty partition.
    pub bleu: Option<f64>,
    /// Semantically-equivalent judgments among judged pairs, when supplied.
    pub se_equivalent: Option<usize>,
    pub se_judged: Option<usize>,
}

/// One scored pair: texts, the reference author's quadrant, and an optional
/// human semantic-equivalence judgment.
#[derive(Debug, Clone)]
pub struct ScoredPair<'a> {
    pub hypothesis: &'a str,
    pub reference: &'a str,
    pub class: ExperienceClass,
    pub semantically_equivalent: Option<bool>,
}

pub fn partitioned_metrics(pairs: &[ScoredPair<'_>]) -> Vec<PartitionRow> {
    let scores: Vec<f64> = pairs
        .iter()
        .map(|p| bleu4_text(p.hypothesis, p.reference).value)
        .collect();
    let any_judged = pairs.iter().any(|p| p.semantically_equivalent.is_some());
    Partition::ALL
        .iter()
        .map(|&partition| {
            let members: Vec<usize> = (0..pairs.len())
                .filter(|&i| partition.contains(pairs[i].class))
                .collect();
            let bleu =
                (!members.is_empty()).then(|| members.iter().map(|&i| scores[i]).sum::<f64>() / members.len() as f64);
            let (se_equivalent, se_judged) = if any_judged {
                let judged: Vec<bool> = members
                    .iter()
                    .filter_map(|&i| pairs[i].semantically_equivalent)
                    .collect();
                (Some(judged.iter().filter(|&&b| b).count()), Some(judged.len()))
            } else {
                (None, None)
            };
            PartitionRow {
                partition,
                count: members.len(),
                bleu,
                se_equivalent,
                se_judged,
            }
        })
        .collect()
}

/// `partition,count,bleu4[,se_equivalent,se_judged]`
pub fn partition_csv(rows: &[PartitionRow]) -> String {
    let with_se = rows.iter().any(|r| r.se_judged.is_some());
    let mut out = String::from("partition,count,bleu4");
    if with_se {
        out.push_str(",se_equivalent,se_judged");
    }
    out.push('\n');
    for r in rows {
        let bleu = r.bleu.map(|b| format!("{b:.2}")).unwrap_or_default();
        out.push_str(&format!("{},{},{}", r.partition.as_str(), r.count, bleu));
        if with_se {
            out.push_str(&format!(
                ",{},{}",
                r.se_equivalent.unwrap_or(0),
                r.se_judged.unwrap_or(0)
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("Use a constant."), ["use", "a", "constant", "."]);
        assert_eq!(toks("x+=1"), ["x", "+", "=", "1"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("  Foo_Bar\t(baz) "), ["foo", "_", "bar", "(", "baz", ")"]);
    }

    #[test]
    fn identical_is_perfect() {
        let x = toks("please rename this variable to something clearer");
        assert!((bleu4(&x, &x).value - 100.0).abs() < 1e-9);
        let short = toks("nit");
        assert!((bleu4(&short, &short).value - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let empty: Vec<String> = Vec::new();
        assert_eq!(bleu4(&empty, &toks("anything at all")).value, 0.0);
        assert_eq!(bleu4(&empty, &empty).value, 0.0);
    }

    #[test]
    fn hand_computed_value() {
        // hyp "a b c d", ref "a b c e": p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0 -> 1/(1+1).
        let s = bleu4(&toks("a b c d"), &toks("a b c e"));
        let expected = 100.0 * ((0.75f64.ln() + (2.0f64 / 3.0).ln() + 0.5f64.ln() + 0.5f64.ln()) / 4.0).exp();
        assert!((s.value - expected).abs() < 1e-9);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_hypotheses() {
        let s = bleu4(&toks("a b"), &toks("a b c d"));
        assert!((s.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn corpus_mean() {
        assert!((corpus_bleu4(&[("same words here ok", "same words here ok"); 3]).unwrap() - 100.0).abs() < 1e-9);
        let pairs = [("a b c d", "a b c e"), ("x y", "z w q")];
        let s1 = bleu4_text(pairs[0].0, pairs[0].1).value;
        let s2 = bleu4_text(pairs[1].0, pairs[1].1).value;
        assert!((corpus_bleu4(&pairs).unwrap() - (s1 + s2) / 2.0).abs() < 1e-12);
        let none: [(&str, &str); 0] = [];
        assert_eq!(corpus_bleu4(&none), Err(EmptyCorpus));
    }

    #[test]
    fn partitions_overlap_by_design() {
        let mk = |h: &'static str, class| ScoredPair {
            hypothesis: h,
            reference: "fix the null check here",
            class,
            semantically_equivalent: None,
        };
        let pairs = [
            mk("fix the null check here", ExperienceClass::MAJOR_REVIEWER_MAJOR_AUTHOR),
            mk("fix the check", ExperienceClass::MAJOR_REVIEWER_MINOR_AUTHOR),
            mk("null here", ExperienceClass::MINOR_REVIEWER_MAJOR_AUTHOR),
            mk("what", ExperienceClass::MINOR_REVIEWER_MINOR_AUTHOR),
        ];
        let rows = partitioned_metrics(&pairs);
        let counts: Vec<usize> = rows.iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![4, 1, 2, 2]);
        let mr = (bleu4_text(pairs[0].hypothesis, pairs[0].reference).value
            + bleu4_text(pairs[1].hypothesis, pairs[1].reference).value)
            / 2.0;
        assert!((rows[2].bleu.unwrap() - mr).abs() < 1e-12);
        assert_eq!(rows[0].se_judged, None);
    }
}
