use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::jsonl;

pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const WORK_ITEMS_FILE: &str = "work_items.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub tsg_id: String,
    pub tsg_version: u64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackPolicy {
    /// Disable when the approval rate is strictly below this.
    pub disable_threshold: f64,
    pub min_votes: usize,
}

impl Default for FeedbackPolicy {
    fn default() -> Self {
        FeedbackPolicy {
            disable_threshold: 0.30,
            min_votes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approval {
    pub tsg_id: String,
    pub tsg_version: u64,
    pub up: usize,
    pub down: usize,
    /// `None` with no votes.
    pub rate: Option<f64>,
}

impl Approval {
    pub fn votes(&self) -> usize {
        self.up + self.down
    }

    pub fn should_disable(&self, policy: &FeedbackPolicy) -> bool {
        self.votes() >= policy.min_votes && self.rate.is_some_and(|r| r < policy.disable_threshold)
    }
}

/// Follow-up for the owner of a disabled document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub tsg_id: String,
    pub tsg_version: u64,
    pub owner: String,
    pub created_at: DateTime<Utc>,
    pub rate: f64,
    pub votes: usize,
    pub message: String,
}

/// Pure fold over a feedback log for one (document, version).
pub fn approval(records: &[FeedbackRecord], tsg_id: &str, version: u64) -> Approval {
    let (mut up, mut down) = (0, 0);
    for r in records.iter().filter(|r| r.tsg_id == tsg_id && r.tsg_version == version) {
        match r.verdict {
            Verdict::Up => up += 1,
            Verdict::Down => down += 1,
        }
    }
    let total = up + down;
    Approval {
        tsg_id: tsg_id.to_string(),
        tsg_version: version,
        up,
        down,
        rate: (total > 0).then(|| up as f64 / total as f64),
    }
}

/// Append-only feedback log plus emitted work items.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    records: Vec<FeedbackRecord>,
    work_items: Vec<WorkItem>,
    dir: Option<PathBuf>,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(FeedbackStore {
            records: jsonl::read_all(&dir.join(FEEDBACK_FILE))?,
            work_items: jsonl::read_all(&dir.join(WORK_ITEMS_FILE))?,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn work_items(&self) -> &[WorkItem] {
        &self.work_items
    }

    pub fn approval(&self, tsg_id: &str, version: u64) -> Approval {
        approval(&self.records, tsg_id, version)
    }

    /// Appends one vote and returns the new approval for its version.
    pub fn add(&mut self, record: FeedbackRecord) -> Approval {
        if let Some(d) = &self.dir {
            if let Err(e) = jsonl::append(&d.join(FEEDBACK_FILE), &record) {
                tracing::warn!("feedback log: {e}");
            }
        }
        let (id, v) = (record.tsg_id.clone(), record.tsg_version);
        self.records.push(record);
        self.approval(&id, v)
    }

    /// Records a work item unless one exists for the same version.
    pub fn raise_work_item(&mut self, item: WorkItem) -> Option<WorkItem> {
        if self
            .work_items
            .iter()
            .any(|w| w.tsg_id == item.tsg_id && w.tsg_version == item.tsg_version)
        {
            return None;
        }
        if let Some(d) = &self.dir {
            if let Err(e) = jsonl::append(&d.join(WORK_ITEMS_FILE), &item) {
                tracing::warn!("work item log: {e}");
            }
        }
        self.work_items.push(item.clone());
        Some(item)
    }
}
