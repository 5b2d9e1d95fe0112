//! Session state as a fold over the event log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use revcorpus::evaluation::sampling::FrameItem;
use revcorpus::evaluation::{BlindedRecord, Judgment};
use serde::{Deserialize, Serialize};

use crate::events::{Event, LogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    Adjudication,
    Solo,
    Review,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    SemanticEquivalence,
    Applicability,
    FeedbackType,
    HasExplanation,
    Category,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::SemanticEquivalence,
        Dimension::Applicability,
        Dimension::FeedbackType,
        Dimension::HasExplanation,
        Dimension::Category,
    ];

    pub fn differs(self, a: &Judgment, b: &Judgment) -> bool {
        match self {
            Dimension::SemanticEquivalence => a.semantic_equivalence != b.semantic_equivalence,
            Dimension::Applicability => a.applicability != b.applicability,
            Dimension::FeedbackType => a.feedback_type != b.feedback_type,
            Dimension::HasExplanation => a.has_explanation != b.has_explanation,
            Dimension::Category => a.category != b.category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    Validation(String),
    #[error("event log out of order: {0}")]
    Corrupt(String),
}

/// One generated comment of one sample.
pub type ItemKey = (u32, String);

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub judgment: Judgment,
    pub annotator: String,
    pub event_id: u64,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjudication {
    pub dimensions: Vec<Dimension>,
    /// Calibration labels of the first and second annotator.
    pub labels: [Judgment; 2],
    pub resolution: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flag {
    pub annotator: String,
    pub note: String,
    pub event_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub frame_id: String,
    pub frame: Vec<FrameItem>,
    /// The first annotator continues alone after calibration; the second reviews.
    pub annotators: [String; 2],
    pub calibration_size: usize,
    pub orders: [Vec<u32>; 2],
    pub phase: Phase,
    pub calibration: [BTreeMap<ItemKey, Label>; 2],
    pub adjudications: BTreeMap<ItemKey, Adjudication>,
    pub finals: BTreeMap<ItemKey, Label>,
    pub flags: BTreeMap<ItemKey, Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub labeled: usize,
    pub total: usize,
}

impl Session {
    pub fn role(&self, annotator: &str) -> Option<usize> {
        self.annotators.iter().position(|a| a == annotator)
    }

    pub fn item(&self, sample_id: u32) -> Option<&FrameItem> {
        self.frame.iter().find(|i| i.sample_id == sample_id)
    }

    pub fn model_count(&self) -> usize {
        self.frame.first().map_or(0, |i| i.comments.len())
    }

    pub fn calibration_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.frame.iter().take(self.calibration_size).map(|i| i.sample_id)
    }

    pub fn solo_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.frame.iter().skip(self.calibration_size).map(|i| i.sample_id)
    }

    pub fn is_calibration(&self, sample_id: u32) -> bool {
        self.calibration_ids().any(|id| id == sample_id)
    }

    fn keys(&self, sample_id: u32) -> Vec<ItemKey> {
        self.item(sample_id)
            .map(|i| i.comments.iter().map(|c| (sample_id, c.alias.clone())).collect())
            .unwrap_or_default()
    }

    fn complete_in(&self, labels: &BTreeMap<ItemKey, Label>, sample_id: u32) -> bool {
        self.keys(sample_id).iter().all(|k| labels.contains_key(k))
    }

    /// Next sample for `role` in the current phase, lowest index first.
    pub fn next_for(&self, role: usize) -> Option<u32> {
        match (self.phase, role) {
            (Phase::Calibration, r) => self.orders[r]
                .iter()
                .copied()
                .find(|&id| !self.complete_in(&self.calibration[r], id)),
            (Phase::Solo, 0) => self.solo_ids().find(|&id| !self.complete_in(&self.finals, id)),
            (Phase::Review, 0) => self
                .frame
                .iter()
                .map(|i| i.sample_id)
                .find(|id| self.flags.keys().any(|k| k.0 == *id)),
            _ => None,
        }
    }

    pub fn progress(&self, role: usize) -> Progress {
        let per_item = self.model_count();
        match self.phase {
            Phase::Calibration => Progress {
                labeled: self.calibration[role].len(),
                total: self.calibration_size * per_item,
            },
            Phase::Adjudication => Progress {
                labeled: self.adjudications.values().filter(|a| a.resolution.is_some()).count(),
                total: self.adjudications.len(),
            },
            _ => Progress {
                labeled: self.finals.len() - self.flags.len(),
                total: self.frame.len() * per_item,
            },
        }
    }

    pub fn unresolved(&self) -> usize {
        self.adjudications.values().filter(|a| a.resolution.is_none()).count()
    }

    /// Final records in (sample, alias) order.
    pub fn export(&self) -> Vec<BlindedRecord> {
        self.finals
            .iter()
            .map(|((sample_id, alias), l)| BlindedRecord {
                sample_id: *sample_id,
                alias: alias.clone(),
                annotator_id: l.annotator.clone(),
                judgment: l.judgment,
                annotated_at: l.at,
            })
            .collect()
    }

    fn joint_annotator(&self) -> String {
        format!("{}+{}", self.annotators[0], self.annotators[1])
    }

    /// Moves forward as far as the labels allow.
    fn advance(&mut self) {
        loop {
            let next = match self.phase {
                Phase::Calibration => {
                    let ids: Vec<u32> = self.calibration_ids().collect();
                    let done = ids
                        .iter()
                        .all(|&id| (0..2).all(|r| self.complete_in(&self.calibration[r], id)));
                    if !done {
                        return;
                    }
                    for id in ids {
                        for key in self.keys(id) {
                            let a = &self.calibration[0][&key];
                            let b = &self.calibration[1][&key];
                            let dimensions: Vec<Dimension> = Dimension::ALL
                                .into_iter()
                                .filter(|d| d.differs(&a.judgment, &b.judgment))
                                .collect();
                            if dimensions.is_empty() {
                                self.finals.insert(key, a.clone());
                            } else {
                                let labels = [a.judgment, b.judgment];
                                self.adjudications.insert(
                                    key,
                                    Adjudication {
                                        dimensions,
                                        labels,
                                        resolution: None,
                                    },
                                );
                            }
                        }
                    }
                    Phase::Adjudication
                }
                Phase::Adjudication if self.unresolved() == 0 => Phase::Solo,
                Phase::Solo if self.solo_ids().all(|id| self.complete_in(&self.finals, id)) => Phase::Review,
                _ => return,
            };
            self.phase = next;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    pub sessions: BTreeMap<String, Session>,
    pub last_event_id: u64,
}

fn check_comment(session: &Session, sample_id: u32, alias: &str) -> Result<(), StateError> {
    let item = session
        .item(sample_id)
        .ok_or_else(|| StateError::NotFound(format!("unknown sample {sample_id}")))?;
    if !item.comments.iter().any(|c| c.alias == alias) {
        return Err(StateError::NotFound(format!(
            "sample {sample_id} has no comment {alias}"
        )));
    }
    Ok(())
}

fn check_judgment(j: &Judgment) -> Result<(), StateError> {
    j.validate().map_err(|e| StateError::Validation(e.to_string()))
}

impl State {
    /// Replays a whole log.
    pub fn fold<'a>(entries: impl IntoIterator<Item = &'a LogEntry>) -> Result<Self, StateError> {
        let mut state = State::default();
        for e in entries {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn session(&self, id: &str) -> Result<&Session, StateError> {
        self.sessions
            .get(id)
            .ok_or_else(|| StateError::NotFound(format!("unknown session {id}")))
    }

    fn enrolled(&self, id: &str, annotator: &str) -> Result<(&Session, usize), StateError> {
        let s = self.session(id)?;
        let role = s
            .role(annotator)
            .ok_or_else(|| StateError::Forbidden(format!("{annotator} is not enrolled in {id}")))?;
        Ok((s, role))
    }

    /// Rejects an entry that `apply` would not accept, without changing anything.
    pub fn check(&self, entry: &LogEntry) -> Result<(), StateError> {
        if entry.event_id <= self.last_event_id {
            return Err(StateError::Corrupt(format!(
                "event {} after event {}",
                entry.event_id, self.last_event_id
            )));
        }
        let id = entry.session_id.as_str();
        match &entry.event {
            Event::SessionCreated {
                frame_id,
                frame,
                annotators,
                calibration_size,
                orders,
            } => {
                if self.sessions.contains_key(id) || self.sessions.values().any(|s| &s.frame_id == frame_id) {
                    return Err(StateError::Conflict(format!(
                        "a session for frame {frame_id} already exists"
                    )));
                }
                if annotators.len() != 2 || annotators[0] == annotators[1] || annotators.iter().any(|a| a.is_empty()) {
                    return Err(StateError::Validation(
                        "exactly two distinct annotators are required".into(),
                    ));
                }
                if frame.is_empty() {
                    return Err(StateError::Validation("the frame is empty".into()));
                }
                if *calibration_size == 0 || *calibration_size > frame.len() {
                    return Err(StateError::Validation(format!(
                        "calibration size {calibration_size} must lie in 1..={}",
                        frame.len()
                    )));
                }
                let ids: BTreeSet<u32> = frame.iter().map(|i| i.sample_id).collect();
                if ids.len() != frame.len() {
                    return Err(StateError::Validation("duplicate sample ids in frame".into()));
                }
                let calibration: BTreeSet<u32> = frame.iter().take(*calibration_size).map(|i| i.sample_id).collect();
                let valid_order = |o: &Vec<u32>| {
                    o.len() == calibration.len() && o.iter().copied().collect::<BTreeSet<_>>() == calibration
                };
                if orders.len() != 2 || !orders.iter().all(valid_order) {
                    return Err(StateError::Validation(
                        "presentation orders must permute the calibration items".into(),
                    ));
                }
                Ok(())
            }
            Event::LabelSubmitted {
                annotator,
                sample_id,
                alias,
                judgment,
            } => {
                let (s, role) = self.enrolled(id, annotator)?;
                check_comment(s, *sample_id, alias)?;
                check_judgment(judgment)?;
                let key = (*sample_id, alias.clone());
                match (s.phase, role) {
                    (Phase::Calibration, _) if s.is_calibration(*sample_id) => Ok(()),
                    (Phase::Calibration, _) => Err(StateError::Conflict(format!(
                        "sample {sample_id} is not part of calibration"
                    ))),
                    (Phase::Solo, 0) if !s.is_calibration(*sample_id) => Ok(()),
                    (Phase::Solo, 0) => Err(StateError::Conflict(format!(
                        "sample {sample_id} was settled in calibration"
                    ))),
                    (Phase::Review, 0) if s.flags.contains_key(&key) => Ok(()),
                    (Phase::Review, 0) => Err(StateError::Conflict(format!(
                        "sample {sample_id} comment {alias} is not reopened"
                    ))),
                    (phase, _) => Err(StateError::Conflict(format!(
                        "{annotator} cannot label during the {phase:?} phase"
                    ))),
                }
            }
            Event::Resolved {
                annotator,
                sample_id,
                alias,
                judgment,
            } => {
                let (s, _) = self.enrolled(id, annotator)?;
                if s.phase != Phase::Adjudication {
                    return Err(StateError::Conflict(format!("session is in the {:?} phase", s.phase)));
                }
                check_comment(s, *sample_id, alias)?;
                let adj = s.adjudications.get(&(*sample_id, alias.clone())).ok_or_else(|| {
                    StateError::Conflict(format!("sample {sample_id} comment {alias} is not a disagreement"))
                })?;
                if adj.resolution.is_some() {
                    return Err(StateError::Conflict(format!(
                        "sample {sample_id} comment {alias} is already resolved"
                    )));
                }
                check_judgment(judgment)
            }
            Event::Flagged {
                annotator,
                sample_id,
                alias,
                ..
            } => {
                let (s, role) = self.enrolled(id, annotator)?;
                if s.phase != Phase::Review {
                    return Err(StateError::Conflict(format!("session is in the {:?} phase", s.phase)));
                }
                if role != 1 {
                    return Err(StateError::Forbidden(format!("{annotator} is not the reviewer")));
                }
                check_comment(s, *sample_id, alias)?;
                if s.flags.contains_key(&(*sample_id, alias.clone())) {
                    return Err(StateError::Conflict(format!(
                        "sample {sample_id} comment {alias} is already reopened"
                    )));
                }
                Ok(())
            }
            Event::Closed { annotator } => {
                let (s, _) = self.enrolled(id, annotator)?;
                if s.phase != Phase::Review {
                    return Err(StateError::Conflict(format!("session is in the {:?} phase", s.phase)));
                }
                if !s.flags.is_empty() {
                    return Err(StateError::Conflict(format!(
                        "{} reopened comments are unlabeled",
                        s.flags.len()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), StateError> {
        self.check(entry)?;
        self.last_event_id = entry.event_id;
        let id = entry.session_id.clone();
        if let Event::SessionCreated {
            frame_id,
            frame,
            annotators,
            calibration_size,
            orders,
        } = &entry.event
        {
            self.sessions.insert(
                id.clone(),
                Session {
                    session_id: id,
                    frame_id: frame_id.clone(),
                    frame: frame.clone(),
                    annotators: [annotators[0].clone(), annotators[1].clone()],
                    calibration_size: *calibration_size,
                    orders: [orders[0].clone(), orders[1].clone()],
                    phase: Phase::Calibration,
                    calibration: Default::default(),
                    adjudications: BTreeMap::new(),
                    finals: BTreeMap::new(),
                    flags: BTreeMap::new(),
                },
            );
            return Ok(());
        }
        let s = self.sessions.get_mut(&id).expect("checked");
        let label = |annotator: &str, judgment: &Judgment| Label {
            judgment: *judgment,
            annotator: annotator.to_owned(),
            event_id: entry.event_id,
            at: entry.at,
        };
        match &entry.event {
            Event::SessionCreated { .. } => unreachable!(),
            Event::LabelSubmitted {
                annotator,
                sample_id,
                alias,
                judgment,
            } => {
                let key = (*sample_id, alias.clone());
                let role = s.role(annotator).expect("checked");
                if s.phase == Phase::Calibration {
                    s.calibration[role].insert(key, label(annotator, judgment));
                } else {
                    s.flags.remove(&key);
                    s.finals.insert(key, label(annotator, judgment));
                }
            }
            Event::Resolved {
                sample_id,
                alias,
                judgment,
                ..
            } => {
                let key = (*sample_id, alias.clone());
                let joint = s.joint_annotator();
                let resolved = label(&joint, judgment);
                s.adjudications.get_mut(&key).expect("checked").resolution = Some(resolved.clone());
                s.finals.insert(key, resolved);
            }
            Event::Flagged {
                annotator,
                sample_id,
                alias,
                note,
            } => {
                s.flags.insert(
                    (*sample_id, alias.clone()),
                    Flag {
                        annotator: annotator.clone(),
                        note: note.clone(),
                        event_id: entry.event_id,
                    },
                );
            }
            Event::Closed { .. } => s.phase = Phase::Closed,
        }
        s.advance();
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use revcorpus::corpus::ExampleKey;
    use revcorpus::evaluation::sampling::BlindedComment;
    use revcorpus::evaluation::{CommentCategory, FeedbackType};

    pub(crate) fn frame(items: u32, models: usize) -> Vec<FrameItem> {
        (1..=items)
            .map(|sample_id| FrameItem {
                sample_id,
                example: ExampleKey {
                    repo: "o/r".into(),
                    pr_id: sample_id as u64,
                    comment_id: 1000 + sample_id as u64,
                },
                m_pre: format!("fn f{sample_id}() {{}}"),
                reference: "please add a test".into(),
                quadrant: None,
                comments: (0..models)
                    .map(|m| BlindedComment {
                        alias: ["A", "B", "C", "D"][m].into(),
                        text: format!("comment {m}"),
                    })
                    .collect(),
            })
            .collect()
    }

    struct Script {
        state: State,
        next: u64,
    }

    impl Script {
        fn new(items: u32, models: usize, calibration: usize) -> Self {
            let mut s = Script {
                state: State::default(),
                next: 1,
            };
            let order: Vec<u32> = (1..=calibration as u32).collect();
            let mut rev = order.clone();
            rev.reverse();
            s.push(Event::SessionCreated {
                frame_id: "f".into(),
                frame: frame(items, models),
                annotators: vec!["ann".into(), "rev".into()],
                calibration_size: calibration,
                orders: vec![order, rev],
            })
            .unwrap();
            s
        }

        fn push(&mut self, event: Event) -> Result<(), StateError> {
            let entry = LogEntry {
                event_id: self.next,
                at: DateTime::from_timestamp(1_700_000_000 + self.next as i64, 0).unwrap(),
                session_id: "s".into(),
                event,
            };
            self.state.apply(&entry)?;
            self.next += 1;
            Ok(())
        }

        fn label(&mut self, who: &str, sample_id: u32, alias: &str, j: Judgment) -> Result<(), StateError> {
            self.push(Event::LabelSubmitted {
                annotator: who.into(),
                sample_id,
                alias: alias.into(),
                judgment: j,
            })
        }

        fn session(&self) -> &Session {
            &self.state.sessions["s"]
        }
    }

    fn yes() -> Judgment {
        Judgment::applicable(true, FeedbackType::Suggestion, true, CommentCategory::Logical)
    }

    fn no() -> Judgment {
        Judgment::not_applicable(false, false)
    }

    #[test]
    fn full_protocol_walk() {
        let mut s = Script::new(4, 2, 2);
        assert_eq!(s.session().next_for(0), Some(1));
        assert_eq!(s.session().next_for(1), Some(2));
        for who in ["ann", "rev"] {
            for id in 1..=2 {
                for alias in ["A", "B"] {
                    let j = if who == "rev" && id == 2 && alias == "B" {
                        no()
                    } else {
                        yes()
                    };
                    s.label(who, id, alias, j).unwrap();
                }
            }
        }
        assert_eq!(s.session().phase, Phase::Adjudication);
        assert_eq!(s.session().adjudications.len(), 1);
        let adj = &s.session().adjudications[&(2, "B".to_string())];
        assert_eq!(
            adj.dimensions,
            vec![
                Dimension::SemanticEquivalence,
                Dimension::Applicability,
                Dimension::FeedbackType,
                Dimension::HasExplanation,
                Dimension::Category
            ]
        );
        let wrong = Event::Resolved {
            annotator: "ann".into(),
            sample_id: 1,
            alias: "A".into(),
            judgment: yes(),
        };
        assert!(matches!(s.push(wrong), Err(StateError::Conflict(_))));
        s.push(Event::Resolved {
            annotator: "rev".into(),
            sample_id: 2,
            alias: "B".into(),
            judgment: no(),
        })
        .unwrap();
        assert_eq!(s.session().phase, Phase::Solo);
        assert_eq!(s.session().finals[&(2, "B".to_string())].annotator, "ann+rev");
        assert!(matches!(s.label("rev", 3, "A", yes()), Err(StateError::Conflict(_))));
        for id in 3..=4 {
            s.label("ann", id, "A", yes()).unwrap();
            s.label("ann", id, "B", no()).unwrap();
        }
        assert_eq!(s.session().phase, Phase::Review);
        assert!(matches!(
            s.push(Event::Flagged {
                annotator: "ann".into(),
                sample_id: 3,
                alias: "A".into(),
                note: String::new()
            }),
            Err(StateError::Forbidden(_))
        ));
        s.push(Event::Flagged {
            annotator: "rev".into(),
            sample_id: 3,
            alias: "A".into(),
            note: "check category".into(),
        })
        .unwrap();
        assert_eq!(s.session().next_for(0), Some(3));
        assert!(matches!(
            s.push(Event::Closed {
                annotator: "rev".into()
            }),
            Err(StateError::Conflict(_))
        ));
        assert!(matches!(s.label("ann", 4, "A", no()), Err(StateError::Conflict(_))));
        s.label("ann", 3, "A", no()).unwrap();
        s.push(Event::Closed {
            annotator: "rev".into(),
        })
        .unwrap();
        assert_eq!(s.session().phase, Phase::Closed);
        let export = s.session().export();
        assert_eq!(export.len(), 8);
        assert_eq!(export[4].judgment, no());
        assert!(matches!(s.label("ann", 1, "A", yes()), Err(StateError::Conflict(_))));
    }

    #[test]
    fn agreement_skips_adjudication() {
        let mut s = Script::new(3, 1, 3);
        for who in ["ann", "rev"] {
            for id in 1..=3 {
                s.label(who, id, "A", yes()).unwrap();
            }
        }
        // Nothing to adjudicate and nothing left for the solo phase.
        assert_eq!(s.session().phase, Phase::Review);
        assert_eq!(s.session().finals.len(), 3);
    }

    #[test]
    fn relabel_is_last_write_wins() {
        let mut s = Script::new(3, 1, 1);
        s.label("ann", 1, "A", yes()).unwrap();
        s.label("ann", 1, "A", no()).unwrap();
        assert_eq!(s.session().calibration[0][&(1, "A".to_string())].judgment, no());
        assert_eq!(s.session().phase, Phase::Calibration);
    }

    #[test]
    fn rejections() {
        let mut s = Script::new(3, 1, 1);
        assert!(matches!(s.label("eve", 1, "A", yes()), Err(StateError::Forbidden(_))));
        assert!(matches!(s.label("ann", 9, "A", yes()), Err(StateError::NotFound(_))));
        assert!(matches!(s.label("ann", 1, "Z", yes()), Err(StateError::NotFound(_))));
        assert!(matches!(s.label("ann", 2, "A", yes()), Err(StateError::Conflict(_))));
        let mut bad = no();
        bad.category = Some(CommentCategory::Praise);
        assert!(matches!(s.label("ann", 1, "A", bad), Err(StateError::Validation(_))));
        let dup = Event::SessionCreated {
            frame_id: "f".into(),
            frame: frame(2, 1),
            annotators: vec!["x".into(), "y".into()],
            calibration_size: 1,
            orders: vec![vec![1], vec![1]],
        };
        assert!(matches!(s.push(dup), Err(StateError::Conflict(_))));
        let stale = LogEntry {
            event_id: 1,
            at: Utc::now(),
            session_id: "s".into(),
            event: Event::Closed {
                annotator: "ann".into(),
            },
        };
        assert!(matches!(s.state.apply(&stale), Err(StateError::Corrupt(_))));
    }
}
