use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::RuntimeConfig;
use crate::executor::ActionRequest;
use crate::query::{Column, TableStore};
use crate::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    UnknownKind,
    Cooldown,
    Conflict,
    NoTicketContext,
    CallDepth,
    UnknownTarget,
    TargetDisabled,
    InvalidParameter,
    ProductionError,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("rejected"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum EnqueueResult {
    Accepted { seq: u64 },
    /// Absorbed by a pending action that makes it unnecessary.
    Coalesced { into: u64 },
    Rejected { reason: RejectReason, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedOp {
    pub seq: u64,
    pub request: ActionRequest,
    /// Sequence numbers of narrower requests this one absorbed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absorbed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpStatus {
    Executed,
    Rejected,
    Failed,
}

/// One line of the actions log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub tsg_id: String,
    pub step: String,
    pub kind: String,
    pub scoping: String,
    pub detected_at: DateTime<Utc>,
    pub status: OpStatus,
    pub detail: String,
}

impl OpRecord {
    fn new(op: &QueuedOp, at: DateTime<Utc>, status: OpStatus, detail: String) -> Self {
        OpRecord {
            seq: op.seq,
            at,
            tsg_id: op.request.tsg_id.clone(),
            step: op.request.step.clone(),
            kind: op.request.kind.name().to_string(),
            scoping: op.request.scoping_key(),
            detected_at: op.request.detected_at,
            status,
            detail,
        }
    }
}

/// Where impactful operations land.
pub trait ProductionInterface: Send {
    fn execute(&mut self, req: &ActionRequest, at: DateTime<Utc>) -> Result<String, String>;
}

/// Records every executed operation as a row of a telemetry table so
/// documents can query their own history.
pub struct SimulatedProduction {
    store: Arc<TableStore>,
    table: String,
}

impl SimulatedProduction {
    pub fn new(store: Arc<TableStore>, table: impl Into<String>) -> Self {
        SimulatedProduction {
            store,
            table: table.into(),
        }
    }

    pub fn columns() -> Vec<Column> {
        vec![
            Column::new("TimeStamp", ValueType::DateTime),
            Column::new("TsgId", ValueType::String),
            Column::new("Step", ValueType::String),
            Column::new("Action", ValueType::String),
            Column::new("ServerName", ValueType::String),
            Column::new("DatabaseName", ValueType::String),
            Column::new("Scoping", ValueType::String),
            Column::new("Parameters", ValueType::String),
            Column::new("DetectedAt", ValueType::DateTime),
        ]
    }
}

impl ProductionInterface for SimulatedProduction {
    fn execute(&mut self, req: &ActionRequest, at: DateTime<Utc>) -> Result<String, String> {
        let text = |k: &str| {
            req.context
                .get(k)
                .map(|v| v.render())
                .unwrap_or_default()
        };
        let params = serde_json::to_string(&req.params).map_err(|e| e.to_string())?;
        let row = vec![
            Value::DateTime(at),
            Value::from(req.tsg_id.as_str()),
            Value::from(req.step.as_str()),
            Value::from(req.kind.name()),
            Value::from(text("ServerName")),
            Value::from(text("DatabaseName")),
            Value::from(req.scoping_key()),
            Value::from(params),
            Value::DateTime(req.detected_at),
        ];
        self.store.append_rows(&self.table, &Self::columns(), vec![row])?;
        Ok(format!("{} executed on {}", req.kind, req.scoping_key()))
    }
}

/// Pending impactful operations, ordered by detection time.
#[derive(Debug, Default, Clone)]
pub struct OperationQueue {
    pending: Vec<QueuedOp>,
    last_impact: BTreeMap<String, DateTime<Utc>>,
    next_seq: u64,
}

impl OperationQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> &[QueuedOp] {
        &self.pending
    }

    /// Seeds cooldown state from a persisted log.
    pub fn restore(&mut self, log: &[OpRecord]) {
        for r in log {
            self.next_seq = self.next_seq.max(r.seq);
            if r.status == OpStatus::Executed {
                let e = self.last_impact.entry(r.scoping.clone()).or_insert(r.at);
                *e = (*e).max(r.at);
            }
        }
    }

    fn in_cooldown(&self, scoping: &str, at: DateTime<Utc>, cfg: &RuntimeConfig) -> bool {
        self.last_impact
            .get(scoping)
            .is_some_and(|last| at >= *last && at < *last + cfg.cooldown.to_chrono())
    }

    /// Admits a request. Returns the result plus ops that were evicted
    /// (absorbed into the request or displaced by it).
    pub fn enqueue(&mut self, req: ActionRequest, cfg: &RuntimeConfig) -> (EnqueueResult, Vec<OpRecord>) {
        let kind = req.kind.name().to_string();
        if !cfg.is_known_kind(&req.kind) {
            let detail = format!("{kind} is not a configured action kind");
            return (rejected(RejectReason::UnknownKind, detail), vec![]);
        }
        let scoping = req.scoping_key();
        if req.impactful && self.in_cooldown(&scoping, req.detected_at, cfg) {
            let detail = format!("{scoping} was acted on within the last {}", cfg.cooldown);
            return (rejected(RejectReason::Cooldown, detail), vec![]);
        }
        let same_scope = |op: &QueuedOp| op.request.scoping_key() == scoping;

        // a pending twin will execute first, so the newcomer lands in its cooldown
        if let Some(op) = self.pending.iter().find(|op| same_scope(op) && op.request.kind == req.kind) {
            if req.impactful {
                let detail = format!("{scoping} already has {} #{} pending", req.kind, op.seq);
                return (rejected(RejectReason::Cooldown, detail), vec![]);
            }
            return (EnqueueResult::Coalesced { into: op.seq }, vec![]);
        }
        if let Some(op) = self
            .pending
            .iter()
            .find(|op| same_scope(op) && cfg.supersedes(op.request.kind.name(), &kind))
        {
            return (EnqueueResult::Coalesced { into: op.seq }, vec![]);
        }

        let mut evicted = Vec::new();
        if let Some(op) = self
            .pending
            .iter()
            .find(|op| same_scope(op) && cfg.conflicts(op.request.kind.name(), &kind))
        {
            if op.request.detected_at <= req.detected_at {
                let detail = format!("conflicts with pending {} #{} detected earlier", op.request.kind, op.seq);
                return (rejected(RejectReason::Conflict, detail), vec![]);
            }
        }
        let now = req.detected_at;
        self.next_seq += 1;
        let seq = self.next_seq;
        let mut absorbed = Vec::new();
        self.pending.retain(|op| {
            if !same_scope(op) {
                return true;
            }
            let other = op.request.kind.name();
            if cfg.supersedes(&kind, other) {
                absorbed.push(op.seq);
                evicted.push(OpRecord::new(op, now, OpStatus::Rejected, format!("coalesced into #{seq}")));
                false
            } else if cfg.conflicts(&kind, other) {
                // the newcomer was detected first
                evicted.push(OpRecord::new(
                    op,
                    now,
                    OpStatus::Rejected,
                    format!("conflict: #{seq} was detected earlier"),
                ));
                false
            } else {
                true
            }
        });
        let pos = self
            .pending
            .iter()
            .position(|op| op.request.detected_at > req.detected_at)
            .unwrap_or(self.pending.len());
        self.pending.insert(pos, QueuedOp { seq, request: req, absorbed });
        (EnqueueResult::Accepted { seq }, evicted)
    }

    /// Executes every pending operation in order, re-checking cooldown at
    /// execution time.
    pub fn process(
        &mut self,
        now: DateTime<Utc>,
        cfg: &RuntimeConfig,
        production: &mut dyn ProductionInterface,
    ) -> Vec<OpRecord> {
        let mut out = Vec::new();
        for op in std::mem::take(&mut self.pending) {
            let scoping = op.request.scoping_key();
            if op.request.impactful && self.in_cooldown(&scoping, now, cfg) {
                let detail = format!("cooldown: {scoping} was acted on within the last {}", cfg.cooldown);
                out.push(OpRecord::new(&op, now, OpStatus::Rejected, detail));
                continue;
            }
            match production.execute(&op.request, now) {
                Ok(detail) => {
                    if op.request.impactful {
                        self.last_impact.insert(scoping, now);
                    }
                    out.push(OpRecord::new(&op, now, OpStatus::Executed, detail));
                }
                Err(e) => out.push(OpRecord::new(&op, now, OpStatus::Failed, e)),
            }
        }
        out
    }
}

fn rejected(reason: RejectReason, detail: String) -> EnqueueResult {
    EnqueueResult::Rejected { reason, detail }
}
