//! Human review of instruction samples: an append-only decision history over a sample store.
//!
//! A sample's effective state is the one set by its latest decision. Replaying the full
//! history over the original samples reproduces the current state exactly.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::instruct::{InstructionSample, ReviewState, TaskKind};
use crate::Error;

pub const MAX_PAGE_SIZE: usize = 200;
const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReviewAction {
    Accept,
    Reject,
    Edit,
}

/// A decision as submitted by a reviewer, before it is timestamped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub sample_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_output: Option<String>,
    #[serde(default)]
    pub reviewer: String,
}

/// One entry of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub sample_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_output: Option<String>,
    pub reviewer: String,
    pub decided_at: String,
}

impl ReviewDecision {
    pub fn new(request: DecisionRequest, decided_at: impl Into<String>) -> Self {
        ReviewDecision {
            sample_id: request.sample_id,
            action: request.action,
            edited_output: request.edited_output,
            reviewer: request.reviewer,
            decided_at: decided_at.into(),
        }
    }

    fn same_request(&self, req: &DecisionRequest) -> bool {
        self.sample_id == req.sample_id
            && self.action == req.action
            && self.edited_output == req.edited_output
            && self.reviewer == req.reviewer
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewQueueStats {
    pub pending: usize,
    pub accepted: usize,
    pub edited: usize,
    pub rejected: usize,
}

impl ReviewQueueStats {
    pub fn total(&self) -> usize {
        self.pending + self.accepted + self.edited + self.rejected
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown sample {0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Storage(#[from] Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    #[serde(flatten)]
    pub sample: InstructionSample,
    pub source_snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<QueueItem>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub sample: InstructionSample,
    /// False when the request repeated the sample's latest decision and nothing was appended.
    pub recorded: bool,
    pub history_len: usize,
}

/// In-memory samples plus decision history. Not synchronized; see [`ReviewService`].
#[derive(Debug, Clone, Default)]
pub struct ReviewStore {
    original: BTreeMap<String, InstructionSample>,
    current: BTreeMap<String, InstructionSample>,
    history: Vec<ReviewDecision>,
    latest: HashMap<String, usize>,
    sources: HashMap<String, String>,
}

impl ReviewStore {
    pub fn new(samples: Vec<InstructionSample>) -> Result<Self, ReviewError> {
        let mut original = BTreeMap::new();
        for sample in samples {
            if let Some(prev) = original.insert(sample.id.clone(), sample) {
                return Err(ReviewError::Validation(format!("duplicate sample id {}", prev.id)));
            }
        }
        Ok(ReviewStore {
            current: original.clone(),
            original,
            ..Default::default()
        })
    }

    /// Rebuilds a store by applying `decisions` in order on top of the original samples.
    pub fn replay(samples: Vec<InstructionSample>, decisions: &[ReviewDecision]) -> Result<Self, ReviewError> {
        let mut store = ReviewStore::new(samples)?;
        for d in decisions {
            store.validate(&DecisionRequest {
                sample_id: d.sample_id.clone(),
                action: d.action,
                edited_output: d.edited_output.clone(),
                reviewer: d.reviewer.clone(),
            })?;
            store.apply(d.clone());
        }
        Ok(store)
    }

    /// Source document texts used for queue snippets, keyed by document id.
    pub fn with_sources(mut self, sources: HashMap<String, String>) -> Self {
        self.sources = sources;
        self
    }

    pub fn get(&self, id: &str) -> Option<&InstructionSample> {
        self.current.get(id)
    }

    /// Samples in id order with their effective review state.
    pub fn samples(&self) -> impl Iterator<Item = &InstructionSample> {
        self.current.values()
    }

    pub fn history(&self) -> &[ReviewDecision] {
        &self.history
    }

    pub fn history_for(&self, id: &str) -> Vec<&ReviewDecision> {
        self.history.iter().filter(|d| d.sample_id == id).collect()
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    fn validate(&self, req: &DecisionRequest) -> Result<(), ReviewError> {
        let sample = self
            .original
            .get(&req.sample_id)
            .ok_or_else(|| ReviewError::NotFound(req.sample_id.clone()))?;
        match (req.action, &req.edited_output) {
            (ReviewAction::Edit, Some(text)) if text.trim().is_empty() => {
                Err(ReviewError::Validation("edited_output must not be empty".into()))
            }
            (ReviewAction::Edit, Some(text)) if *text == sample.output => Err(ReviewError::Validation(
                "edited_output is identical to the current output".into(),
            )),
            (ReviewAction::Edit, Some(_)) => Ok(()),
            (ReviewAction::Edit, None) => Err(ReviewError::Validation("Edit requires edited_output".into())),
            (_, Some(_)) => Err(ReviewError::Validation(
                "edited_output is only allowed with Edit".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// True when `req` repeats the sample's latest decision.
    pub fn is_replay(&self, req: &DecisionRequest) -> bool {
        self.latest
            .get(&req.sample_id)
            .is_some_and(|&i| self.history[i].same_request(req))
    }

    fn apply(&mut self, decision: ReviewDecision) {
        let sample = self
            .current
            .get_mut(&decision.sample_id)
            .expect("decision validated against the store");
        match decision.action {
            ReviewAction::Accept => {
                sample.review_state = ReviewState::Accepted;
                sample.edited_output = None;
            }
            ReviewAction::Reject => {
                sample.review_state = ReviewState::Rejected;
                sample.edited_output = None;
            }
            ReviewAction::Edit => {
                sample.review_state = ReviewState::Edited;
                sample.edited_output = decision.edited_output.clone();
            }
        }
        self.latest.insert(decision.sample_id.clone(), self.history.len());
        self.history.push(decision);
    }

    /// Validates and appends a decision, returning the updated sample. A request identical to
    /// the sample's latest decision is a no-op.
    pub fn submit(&mut self, req: DecisionRequest, decided_at: &str) -> Result<SubmitOutcome, ReviewError> {
        self.validate(&req)?;
        let recorded = !self.is_replay(&req);
        if recorded {
            self.apply(ReviewDecision::new(req.clone(), decided_at));
        }
        Ok(self.outcome(&req.sample_id, recorded))
    }

    fn outcome(&self, id: &str, recorded: bool) -> SubmitOutcome {
        SubmitOutcome {
            sample: self.current[id].clone(),
            recorded,
            history_len: self.history.iter().filter(|d| d.sample_id == id).count(),
        }
    }

    pub fn stats(&self) -> ReviewQueueStats {
        let mut s = ReviewQueueStats::default();
        for sample in self.current.values() {
            match sample.review_state {
                ReviewState::Pending => s.pending += 1,
                ReviewState::Accepted => s.accepted += 1,
                ReviewState::Edited => s.edited += 1,
                ReviewState::Rejected => s.rejected += 1,
            }
        }
        s
    }

    /// Samples in `state` (optionally one task), ordered by id, paged.
    pub fn list(
        &self,
        state: ReviewState,
        task: Option<TaskKind>,
        page: usize,
        page_size: usize,
    ) -> Result<QueuePage, ReviewError> {
        if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
            return Err(ReviewError::Validation(format!(
                "page_size must be between 1 and {MAX_PAGE_SIZE}"
            )));
        }
        let matching: Vec<&InstructionSample> = self
            .current
            .values()
            .filter(|s| s.review_state == state && task.is_none_or(|t| s.task == t))
            .collect();
        let items = matching
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|s| QueueItem {
                sample: (*s).clone(),
                source_snippet: s
                    .source_doc_id
                    .as_ref()
                    .and_then(|id| self.sources.get(id))
                    .map(|text| crate::instruct::excerpt(text, SNIPPET_CHARS)),
            })
            .collect();
        Ok(QueuePage {
            items,
            page,
            page_size,
            total: matching.len(),
        })
    }

    pub fn list_pending(
        &self,
        task: Option<TaskKind>,
        page: usize,
        page_size: usize,
    ) -> Result<QueuePage, ReviewError> {
        self.list(ReviewState::Pending, task, page, page_size)
    }
}

/// Append-only JSONL decision log. Every append is flushed and synced before it returns.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    pub fn open(path: &Path) -> Result<Self, Error> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(DecisionLog {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reads every decision in the log; a missing file is an empty log.
    pub fn read_all(path: &Path) -> Result<Vec<ReviewDecision>, Error> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        crate::jsonl::read(path)
    }

    pub fn append(&mut self, decision: &ReviewDecision) -> Result<(), Error> {
        let mut line = serde_json::to_vec(decision)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Thread-safe review service: many concurrent readers, one writer at a time. A decision is
/// appended to the log before the in-memory state changes and before `submit` returns.
#[derive(Debug)]
pub struct ReviewService {
    store: RwLock<ReviewStore>,
    log: Option<Mutex<DecisionLog>>,
}

impl ReviewService {
    /// Service without persistence.
    pub fn in_memory(store: ReviewStore) -> Self {
        ReviewService {
            store: RwLock::new(store),
            log: None,
        }
    }

    /// Loads samples, replays the log at `log_path`, and keeps appending to it.
    pub fn open(samples: Vec<InstructionSample>, log_path: &Path) -> Result<Self, ReviewError> {
        let decisions = DecisionLog::read_all(log_path)?;
        let store = ReviewStore::replay(samples, &decisions)?;
        Ok(ReviewService {
            store: RwLock::new(store),
            log: Some(Mutex::new(DecisionLog::open(log_path)?)),
        })
    }

    pub fn with_sources(self, sources: HashMap<String, String>) -> Self {
        let store = self.store.into_inner().expect("review store lock poisoned");
        ReviewService {
            store: RwLock::new(store.with_sources(sources)),
            log: self.log,
        }
    }

    pub fn read<R>(&self, f: impl FnOnce(&ReviewStore) -> R) -> R {
        f(&self.store.read().expect("review store lock poisoned"))
    }

    pub fn submit(&self, req: DecisionRequest, decided_at: &str) -> Result<SubmitOutcome, ReviewError> {
        let mut store = self.store.write().expect("review store lock poisoned");
        store.validate(&req)?;
        if store.is_replay(&req) {
            return Ok(store.outcome(&req.sample_id, false));
        }
        let decision = ReviewDecision::new(req.clone(), decided_at);
        if let Some(log) = &self.log {
            log.lock().expect("decision log lock poisoned").append(&decision)?;
        }
        store.apply(decision);
        Ok(store.outcome(&req.sample_id, true))
    }

    pub fn stats(&self) -> ReviewQueueStats {
        self.read(ReviewStore::stats)
    }
}
