//! Protocol operations on top of the log and the folded state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use revcorpus::evaluation::sampling::{BlindedComment, SampleFrame, SamplingError};
use revcorpus::evaluation::{BlindedRecord, Judgment};
use serde::{Deserialize, Serialize};

use crate::agreement::{agreement, AgreementReport};
use crate::events::{Event, EventLog, LogEntry, LogError};
use crate::state::{Dimension, Phase, Progress, Session, State, StateError};

pub const DEFAULT_CALIBRATION_SIZE: usize = 25;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("frame store: {0}")]
    Frames(String),
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

/// Sample frames the service may open sessions on, by frame id.
#[derive(Debug, Clone, Default)]
pub struct FrameStore {
    frames: BTreeMap<String, SampleFrame>,
}

impl FrameStore {
    pub fn insert(&mut self, frame: SampleFrame) -> String {
        let id = frame.frame_id();
        self.frames.insert(id.clone(), frame);
        id
    }

    /// Every `*.jsonl` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ServiceError> {
        let mut store = Self::default();
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Frames(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            let frame = SampleFrame::load(&p).map_err(|e: SamplingError| ServiceError::Frames(e.to_string()))?;
            let id = store.insert(frame);
            log::info!("frame {id} from {}", p.display());
        }
        Ok(store)
    }

    pub fn get(&self, id: &str) -> Option<&SampleFrame> {
        self.frames.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub frame_id: String,
    pub annotators: Vec<String>,
    #[serde(default)]
    pub calibration_size: Option<usize>,
    /// Seeds the per-annotator presentation orders.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SubmitLabel {
    pub annotator: String,
    pub sample_id: u32,
    pub alias: String,
    #[serde(flatten)]
    pub judgment: Judgment,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Resolve {
    pub annotator: String,
    #[serde(flatten)]
    pub judgment: Judgment,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FlagRequest {
    pub annotator: String,
    pub sample_id: u32,
    pub alias: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CloseRequest {
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub event_id: u64,
    pub phase: Phase,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Created {
    pub session_id: String,
    pub phase: Phase,
}

/// What an annotator sees for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlindedItem {
    pub sample_id: u32,
    pub m_pre: String,
    pub reference: String,
    pub comments: Vec<BlindedComment>,
    /// Aliases this annotator still has to label.
    pub pending: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Next {
    Item {
        phase: Phase,
        progress: Progress,
        item: BlindedItem,
    },
    PhaseComplete {
        phase: Phase,
        progress: Progress,
        /// Calibration disagreements, once calibration is over.
        #[serde(skip_serializing_if = "Option::is_none")]
        disagreements: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        unresolved: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        open_flags: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorLabel {
    pub annotator: String,
    #[serde(flatten)]
    pub judgment: Judgment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationView {
    pub item_id: String,
    pub sample_id: u32,
    pub alias: String,
    pub dimensions: Vec<Dimension>,
    pub labels: Vec<AnnotatorLabel>,
    pub resolution: Option<Judgment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub frame_id: String,
    pub phase: Phase,
    pub annotators: Vec<String>,
    pub calibration_size: usize,
    pub items: usize,
    pub comments_per_item: usize,
    pub disagreements: usize,
    pub unresolved: usize,
    pub open_flags: usize,
    pub final_records: usize,
}

/// `"<sample_id>-<alias>"`, as used in adjudication URLs.
pub fn item_id(sample_id: u32, alias: &str) -> String {
    format!("{sample_id}-{alias}")
}

pub fn parse_item_id(id: &str) -> Option<(u32, String)> {
    let (sample, alias) = id.split_once('-')?;
    Some((sample.parse().ok()?, alias.to_owned()))
}

pub struct Service {
    state: State,
    log: EventLog,
    frames: FrameStore,
    clock: Clock,
}

impl Service {
    /// Opens the log at `log_path` and replays it.
    pub fn open(log_path: &Path, frames: FrameStore, clock: Clock) -> Result<Self, ServiceError> {
        let (log, entries) = EventLog::open(log_path)?;
        let state = State::fold(&entries)?;
        log::info!("replayed {} events from {}", entries.len(), log_path.display());
        Ok(Self {
            state,
            log,
            frames,
            clock,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn frames(&self) -> &FrameStore {
        &self.frames
    }

    fn commit(&mut self, session_id: &str, event: Event) -> Result<LogEntry, ServiceError> {
        let entry = LogEntry {
            event_id: self.state.last_event_id + 1,
            at: (self.clock)(),
            session_id: session_id.to_owned(),
            event,
        };
        self.state.check(&entry)?;
        self.log.append(&entry)?;
        self.state.apply(&entry).expect("entry was checked");
        Ok(entry)
    }

    fn ack(&self, session_id: &str, annotator: &str, entry: &LogEntry) -> Result<Ack, ServiceError> {
        let s = self.state.session(session_id)?;
        let role = s.role(annotator).unwrap_or(0);
        Ok(Ack {
            event_id: entry.event_id,
            phase: s.phase,
            progress: s.progress(role),
        })
    }

    fn enrolled(&self, session_id: &str, annotator: &str) -> Result<(&Session, usize), ServiceError> {
        let s = self.state.session(session_id)?;
        let role = s
            .role(annotator)
            .ok_or_else(|| StateError::Forbidden(format!("{annotator} is not enrolled in {session_id}")))?;
        Ok((s, role))
    }

    pub fn create_session(&mut self, req: CreateSession) -> Result<Created, ServiceError> {
        let frame = self
            .frames
            .get(&req.frame_id)
            .ok_or_else(|| StateError::NotFound(format!("unknown frame {}", req.frame_id)))?;
        if req.annotators.len() != 2 {
            return Err(StateError::Validation(format!(
                "calibration needs exactly two annotators, got {}",
                req.annotators.len()
            ))
            .into());
        }
        let calibration_size = req.calibration_size.unwrap_or(DEFAULT_CALIBRATION_SIZE);
        if calibration_size == 0 || calibration_size > frame.items.len() {
            return Err(StateError::Validation(format!(
                "calibration size {calibration_size} must lie in 1..={}",
                frame.items.len()
            ))
            .into());
        }
        let ids: Vec<u32> = frame.items.iter().take(calibration_size).map(|i| i.sample_id).collect();
        // Frame ids are hex content hashes, so they double as a default seed.
        let seed = req
            .seed
            .unwrap_or_else(|| u64::from_str_radix(req.frame_id.get(..16).unwrap_or(&req.frame_id), 16).unwrap_or(0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let orders = req
            .annotators
            .iter()
            .map(|_| {
                let mut order = ids.clone();
                order.shuffle(&mut rng);
                order
            })
            .collect();
        let session_id = format!("s-{}", req.frame_id);
        let event = Event::SessionCreated {
            frame_id: req.frame_id.clone(),
            frame: frame.items.clone(),
            annotators: req.annotators,
            calibration_size,
            orders,
        };
        self.commit(&session_id, event)?;
        Ok(Created {
            session_id,
            phase: Phase::Calibration,
        })
    }

    pub fn summary(&self, session_id: &str) -> Result<SessionSummary, ServiceError> {
        let s = self.state.session(session_id)?;
        Ok(SessionSummary {
            session_id: s.session_id.clone(),
            frame_id: s.frame_id.clone(),
            phase: s.phase,
            annotators: s.annotators.to_vec(),
            calibration_size: s.calibration_size,
            items: s.frame.len(),
            comments_per_item: s.model_count(),
            disagreements: s.adjudications.len(),
            unresolved: s.unresolved(),
            open_flags: s.flags.len(),
            final_records: s.finals.len(),
        })
    }

    pub fn next_item(&self, session_id: &str, annotator: &str) -> Result<Next, ServiceError> {
        let (s, role) = self.enrolled(session_id, annotator)?;
        let progress = s.progress(role);
        let Some(sample_id) = s.next_for(role) else {
            let after_calibration = s.phase > Phase::Calibration;
            return Ok(Next::PhaseComplete {
                phase: s.phase,
                progress,
                disagreements: after_calibration.then_some(s.adjudications.len()),
                unresolved: (s.phase == Phase::Adjudication).then(|| s.unresolved()),
                open_flags: (s.phase == Phase::Review).then_some(s.flags.len()),
            });
        };
        let item = s.item(sample_id).expect("scheduled items exist");
        let pending = item
            .comments
            .iter()
            .map(|c| c.alias.clone())
            .filter(|alias| {
                let key = (sample_id, alias.clone());
                match s.phase {
                    Phase::Calibration => !s.calibration[role].contains_key(&key),
                    Phase::Review => s.flags.contains_key(&key),
                    _ => !s.finals.contains_key(&key),
                }
            })
            .collect();
        Ok(Next::Item {
            phase: s.phase,
            progress,
            item: BlindedItem {
                sample_id,
                m_pre: item.m_pre.clone(),
                reference: item.reference.clone(),
                comments: item.comments.clone(),
                pending,
            },
        })
    }

    pub fn submit_label(&mut self, session_id: &str, req: SubmitLabel) -> Result<Ack, ServiceError> {
        self.enrolled(session_id, &req.annotator)?;
        let annotator = req.annotator.clone();
        let entry = self.commit(
            session_id,
            Event::LabelSubmitted {
                annotator: req.annotator,
                sample_id: req.sample_id,
                alias: req.alias,
                judgment: req.judgment,
            },
        )?;
        self.ack(session_id, &annotator, &entry)
    }

    pub fn agreement(&self, session_id: &str, batch_size: usize) -> Result<AgreementReport, ServiceError> {
        Ok(agreement(self.state.session(session_id)?, batch_size)?)
    }

    pub fn adjudications(&self, session_id: &str) -> Result<Vec<AdjudicationView>, ServiceError> {
        let s = self.state.session(session_id)?;
        Ok(s.adjudications
            .iter()
            .map(|((sample_id, alias), a)| AdjudicationView {
                item_id: item_id(*sample_id, alias),
                sample_id: *sample_id,
                alias: alias.clone(),
                dimensions: a.dimensions.clone(),
                labels: s
                    .annotators
                    .iter()
                    .zip(a.labels)
                    .map(|(who, judgment)| AnnotatorLabel {
                        annotator: who.clone(),
                        judgment,
                    })
                    .collect(),
                resolution: a.resolution.as_ref().map(|l| l.judgment),
            })
            .collect())
    }

    pub fn resolve(&mut self, session_id: &str, item: &str, req: Resolve) -> Result<Ack, ServiceError> {
        let (sample_id, alias) =
            parse_item_id(item).ok_or_else(|| StateError::NotFound(format!("malformed adjudication item {item:?}")))?;
        self.enrolled(session_id, &req.annotator)?;
        let annotator = req.annotator.clone();
        let entry = self.commit(
            session_id,
            Event::Resolved {
                annotator: req.annotator,
                sample_id,
                alias,
                judgment: req.judgment,
            },
        )?;
        self.ack(session_id, &annotator, &entry)
    }

    pub fn flag(&mut self, session_id: &str, req: FlagRequest) -> Result<Ack, ServiceError> {
        self.enrolled(session_id, &req.annotator)?;
        let annotator = req.annotator.clone();
        let entry = self.commit(
            session_id,
            Event::Flagged {
                annotator: req.annotator,
                sample_id: req.sample_id,
                alias: req.alias,
                note: req.note,
            },
        )?;
        self.ack(session_id, &annotator, &entry)
    }

    pub fn close(&mut self, session_id: &str, req: CloseRequest) -> Result<Ack, ServiceError> {
        self.enrolled(session_id, &req.annotator)?;
        let entry = self.commit(
            session_id,
            Event::Closed {
                annotator: req.annotator.clone(),
            },
        )?;
        self.ack(session_id, &req.annotator, &entry)
    }

    /// Final labels for the reviewer during the review phase, and for anyone once closed.
    pub fn final_labels(&self, session_id: &str, annotator: &str) -> Result<Vec<BlindedRecord>, ServiceError> {
        let (s, role) = self.enrolled(session_id, annotator)?;
        if s.phase < Phase::Review || (s.phase == Phase::Review && role != 1) {
            return Err(StateError::Conflict(format!("final labels are not open to {annotator} yet")).into());
        }
        Ok(s.export())
    }

    pub fn export(&self, session_id: &str) -> Result<Vec<BlindedRecord>, ServiceError> {
        let s = self.state.session(session_id)?;
        if s.phase != Phase::Closed {
            return Err(StateError::Conflict(format!("session is in the {:?} phase, not closed", s.phase)).into());
        }
        Ok(s.export())
    }
}
