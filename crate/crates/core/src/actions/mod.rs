//! Side effects of findings: ticket updates, scheduler incidents, the
//! impactful-operation queue and chained document calls.

mod incidents;
mod queue;
mod ticket;

use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use incidents::{IncidentOutcome, IncidentRecord, IncidentState, IncidentStore, QuotaConfig, QuotaState};
pub use queue::{
    EnqueueResult, OpRecord, OpStatus, OperationQueue, ProductionInterface, QueuedOp, RejectReason,
    SimulatedProduction,
};
pub use ticket::{increase_severity, route, Severity, Ticket};

use crate::context::ExecutionContext;
use crate::executor::{ActionRequest, Finding, StepStatus};
use crate::model::{ActionKind, StepKind};
use crate::value::Timespan;

pub const INCIDENTS_FILE: &str = "incidents.jsonl";
pub const ACTIONS_FILE: &str = "actions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub cooldown: Timespan,
    pub quota_limit: u32,
    pub quota_window: Timespan,
    pub call_depth_limit: u32,
    /// Production operation kinds beyond the DSL ones.
    pub production_kinds: Vec<String>,
    /// (broader, narrower): a pending broader action absorbs the narrower one.
    pub supersedes: Vec<(String, String)>,
    /// Unordered pairs that must not both run on the same target.
    pub conflicts: Vec<(String, String)>,
    /// Telemetry table executed operations are appended to.
    pub actions_table: String,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        let s = |a: &str, b: &str| (a.to_string(), b.to_string());
        RuntimeConfig {
            cooldown: Timespan::from_minutes(30),
            quota_limit: 50,
            quota_window: Timespan::from_days(1),
            call_depth_limit: 3,
            production_kinds: ["RestartProcess", "MoveResource", "KillTransaction", "AddResources", "Failover"]
                .map(String::from)
                .to_vec(),
            supersedes: vec![s("MoveResource", "RestartProcess"), s("Failover", "RestartProcess")],
            conflicts: vec![s("KillTransaction", "AddResources")],
            actions_table: "AutoTsgActions".into(),
        }
    }
}

impl RuntimeConfig {
    pub fn quota(&self) -> QuotaConfig {
        QuotaConfig {
            limit: self.quota_limit,
            window: self.quota_window,
        }
    }

    pub fn is_known_kind(&self, kind: &ActionKind) -> bool {
        match kind {
            ActionKind::Production(n) => self.production_kinds.iter().any(|k| k == n),
            _ => true,
        }
    }

    pub fn supersedes(&self, broader: &str, narrower: &str) -> bool {
        self.supersedes.iter().any(|(b, n)| b == broader && n == narrower)
    }

    pub fn conflicts(&self, a: &str, b: &str) -> bool {
        self.conflicts
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error("unknown target '{0}'")]
    Unknown(String),
    #[error("target '{0}' is disabled")]
    Disabled(String),
}

/// Runs another document on behalf of a CallAutoTsg action.
pub trait CallTarget {
    fn call(
        &self,
        target: &str,
        base: &ExecutionContext,
        depth: u32,
        now: DateTime<Utc>,
    ) -> Result<Finding, CallError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ActionResult {
    TicketUpdated { note: String },
    Incident { outcome: IncidentOutcome },
    Queued { outcome: EnqueueResult },
    Called { target: String, activated: bool },
    Rejected { reason: RejectReason, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub tsg_id: String,
    pub step: String,
    pub kind: String,
    pub scoping: String,
    pub call_depth: u32,
    #[serde(flatten)]
    pub result: ActionResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub outcomes: Vec<ActionOutcome>,
    /// Findings produced by CallAutoTsg, in call order.
    pub called: Vec<Finding>,
    /// Queue entries displaced while admitting these requests.
    pub evicted: Vec<OpRecord>,
}

/// Ambient state of the session the actions came from.
pub struct DispatchEnv<'a> {
    pub now: DateTime<Utc>,
    pub ticket: Option<&'a mut Ticket>,
    pub engine: Option<&'a dyn CallTarget>,
}

impl<'a> DispatchEnv<'a> {
    pub fn new(now: DateTime<Utc>) -> Self {
        DispatchEnv {
            now,
            ticket: None,
            engine: None,
        }
    }
}

pub struct ActionRuntime {
    config: RuntimeConfig,
    queue: Mutex<OperationQueue>,
    incidents: RwLock<IncidentStore>,
    production: Mutex<Box<dyn ProductionInterface>>,
    log_dir: Option<PathBuf>,
}

impl ActionRuntime {
    pub fn new(config: RuntimeConfig, production: Box<dyn ProductionInterface>) -> Self {
        ActionRuntime {
            config,
            queue: Mutex::new(OperationQueue::new()),
            incidents: RwLock::new(IncidentStore::new()),
            production: Mutex::new(production),
            log_dir: None,
        }
    }

    /// Persists to (and resumes from) JSON-lines files under `dir`.
    pub fn with_log_dir(mut self, dir: &Path) -> std::io::Result<Self> {
        let snaps: Vec<IncidentRecord> = crate::jsonl::read_all(&dir.join(INCIDENTS_FILE))?;
        let ops: Vec<OpRecord> = crate::jsonl::read_all(&dir.join(ACTIONS_FILE))?;
        *self.incidents.get_mut().unwrap() = IncidentStore::from_records(snaps);
        self.queue.get_mut().unwrap().restore(&ops);
        self.log_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn incidents(&self) -> RwLockReadGuard<'_, IncidentStore> {
        self.incidents.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn pending(&self) -> Vec<QueuedOp> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner()).pending().to_vec()
    }

    fn persist_incidents(&self, store: &IncidentStore, ids: &[String]) {
        let Some(dir) = &self.log_dir else { return };
        for id in ids {
            if let Some(r) = store.get(id) {
                if let Err(e) = crate::jsonl::append(&dir.join(INCIDENTS_FILE), r) {
                    tracing::warn!("cannot persist incident {id}: {e}");
                }
            }
        }
    }

    fn persist_ops(&self, ops: &[OpRecord]) {
        let Some(dir) = &self.log_dir else { return };
        for op in ops {
            if let Err(e) = crate::jsonl::append(&dir.join(ACTIONS_FILE), op) {
                tracing::warn!("cannot persist action #{}: {e}", op.seq);
            }
        }
    }

    /// Applies every action a finding requested, recursing into called documents.
    pub fn dispatch(&self, finding: &Finding, env: &mut DispatchEnv<'_>) -> DispatchReport {
        let mut report = DispatchReport::default();
        self.dispatch_into(finding, env, &mut report);
        report
    }

    fn dispatch_into(&self, finding: &Finding, env: &mut DispatchEnv<'_>, report: &mut DispatchReport) {
        for req in &finding.actions {
            let result = self.apply(finding, req, env, report);
            report.outcomes.push(ActionOutcome {
                tsg_id: req.tsg_id.clone(),
                step: req.step.clone(),
                kind: req.kind.name().to_string(),
                scoping: req.scoping_key(),
                call_depth: req.call_depth,
                result,
            });
        }
    }

    fn apply(
        &self,
        finding: &Finding,
        req: &ActionRequest,
        env: &mut DispatchEnv<'_>,
        report: &mut DispatchReport,
    ) -> ActionResult {
        let reject = |reason, detail: String| ActionResult::Rejected { reason, detail };
        match &req.kind {
            ActionKind::IncreaseSeverity | ActionKind::RouteTicket => {
                let Some(ticket) = env.ticket.as_deref_mut() else {
                    return reject(RejectReason::NoTicketContext, "no ticket in this session".into());
                };
                let by = format!("{}/{}", req.tsg_id, req.step);
                if req.kind == ActionKind::RouteTicket {
                    let team = req.param("TeamName").unwrap_or_default();
                    return ActionResult::TicketUpdated {
                        note: route(ticket, team, &by),
                    };
                }
                match req.param("NewSeverity").unwrap_or_default().parse::<Severity>() {
                    Ok(sev) => ActionResult::TicketUpdated {
                        note: increase_severity(ticket, sev, &by),
                    },
                    Err(e) => reject(RejectReason::InvalidParameter, e),
                }
            }
            ActionKind::CreateIncident => {
                let body = incident_body(finding, req);
                let mut store = self.incidents.write().unwrap_or_else(|e| e.into_inner());
                let (outcome, changed) = store.create_incident(req, &body, env.now, self.config.quota());
                self.persist_incidents(&store, &changed);
                ActionResult::Incident { outcome }
            }
            ActionKind::CallAutoTsg => {
                let target = req.param("TargetTsg").unwrap_or_default().to_string();
                let depth = req.call_depth + 1;
                if depth > self.config.call_depth_limit {
                    return reject(
                        RejectReason::CallDepth,
                        format!("calling {target} would reach depth {depth}, limit {}", self.config.call_depth_limit),
                    );
                }
                let Some(engine) = env.engine else {
                    return reject(RejectReason::UnknownTarget, format!("no documents to call {target} from"));
                };
                match engine.call(&target, &req.context, depth, env.now) {
                    Ok(mut called) => {
                        called.called_by.get_or_insert_with(|| req.tsg_id.clone());
                        let activated = called.activated;
                        report.called.push(called.clone());
                        self.dispatch_into(&called, env, report);
                        ActionResult::Called { target, activated }
                    }
                    Err(e @ CallError::Unknown(_)) => reject(RejectReason::UnknownTarget, e.to_string()),
                    Err(e @ CallError::Disabled(_)) => reject(RejectReason::TargetDisabled, e.to_string()),
                }
            }
            ActionKind::CancelManagementOperation | ActionKind::Production(_) => {
                let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
                let (outcome, evicted) = q.enqueue(req.clone(), &self.config);
                self.persist_ops(&evicted);
                report.evicted.extend(evicted);
                ActionResult::Queued { outcome }
            }
        }
    }

    /// Admits one request to the operation queue directly.
    pub fn enqueue(&self, req: ActionRequest) -> (EnqueueResult, Vec<OpRecord>) {
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        let (r, evicted) = q.enqueue(req, &self.config);
        self.persist_ops(&evicted);
        (r, evicted)
    }

    /// Drains the queue through the production interface.
    pub fn process(&self, now: DateTime<Utc>) -> Vec<OpRecord> {
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        let mut prod = self.production.lock().unwrap_or_else(|e| e.into_inner());
        let done = q.process(now, &self.config, prod.as_mut());
        self.persist_ops(&done);
        done
    }

    pub fn expire_incidents(&self, now: DateTime<Utc>) -> Vec<String> {
        let mut store = self.incidents.write().unwrap_or_else(|e| e.into_inner());
        let ids = store.expire_incidents(now);
        self.persist_incidents(&store, &ids);
        ids
    }
}

/// Explanations fired under the incident's scoping values, in firing order.
fn incident_body(finding: &Finding, req: &ActionRequest) -> String {
    let keys: Vec<&str> = req.scoping.keys().collect();
    let mut seen = Vec::new();
    for o in &finding.outcomes {
        if o.kind != StepKind::Explanation || o.status != StepStatus::Fired {
            continue;
        }
        if o.context.project(&keys) != req.scoping {
            continue;
        }
        if let Some(md) = &o.markdown {
            if !seen.contains(md) {
                seen.push(md.clone());
            }
        }
    }
    seen.join("\n\n")
}
