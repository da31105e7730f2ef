use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::context::ExecutionContext;
use crate::model::{ActionKind, StepKind, TsgType};
use crate::query::Table;
use crate::value::Timespan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepStatus {
    Fired,
    NoData,
    FilteredOut,
    SkippedMissingKeys,
    Deduplicated,
    Errored,
}

/// One query as sent to a source, with its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub source: String,
    pub text: String,
    pub table: Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: String,
    pub kind: StepKind,
    pub status: StepStatus,
    /// Incoming context.
    pub context: ExecutionContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markdown: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QueryRun>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variations: Vec<ExecutionContext>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memo_key: Option<String>,
    /// Index of the outcome a Deduplicated entry refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
}

impl StepOutcome {
    pub(crate) fn new(step: &str, kind: StepKind, status: StepStatus, ctx: &ExecutionContext) -> Self {
        StepOutcome {
            step: step.to_string(),
            kind,
            status,
            context: ctx.clone(),
            markdown: None,
            queries: Vec::new(),
            variations: Vec::new(),
            missing_keys: Vec::new(),
            error: None,
            memo_key: None,
            duplicate_of: None,
        }
    }

    /// The first result table, if the step ran a query.
    pub fn table(&self) -> Option<&Table> {
        self.queries.first().map(|q| &q.table)
    }
}

/// A side effect requested by an action step; carried out by the action runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub tsg_id: String,
    pub step: String,
    pub kind: ActionKind,
    pub params: IndexMap<String, String>,
    /// Projection that identifies the target (incident identity, cooldown scope).
    pub scoping: ExecutionContext,
    pub context: ExecutionContext,
    pub detected_at: DateTime<Utc>,
    pub impactful: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<Timespan>,
    #[serde(default)]
    pub call_depth: u32,
}

impl ActionRequest {
    pub fn scoping_key(&self) -> String {
        self.scoping.canonical()
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.get(name).map(String::as_str)
    }
}

/// Aggregated result of one document's execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub tsg_id: String,
    pub version: u64,
    pub title: String,
    pub tsg_type: TsgType,
    pub topics: Vec<String>,
    pub activated: bool,
    pub errored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headline: Option<String>,
    pub outcomes: Vec<StepOutcome>,
    pub actions: Vec<ActionRequest>,
    /// Query executions per step name.
    pub query_calls: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub called_by: Option<String>,
}

impl Finding {
    pub fn fired(&self) -> impl Iterator<Item = &StepOutcome> {
        self.outcomes.iter().filter(|o| o.status == StepStatus::Fired)
    }

    pub fn count(&self, status: StepStatus) -> usize {
        self.outcomes.iter().filter(|o| o.status == status).count()
    }
}
