use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::extract::{extract_with_rules, BaseContextRule, ExtractError, ExtractedContext, IncidentPayload};
use super::feedback::{Approval, FeedbackPolicy, FeedbackRecord, FeedbackStore, WorkItem};
use super::registry::{summary, TsgRegistry, TsgSummary};
use super::render::{render_response, DiagnosticResponse, SessionResult};
use crate::actions::{
    ActionResult, ActionRuntime, CallError, CallTarget, DispatchEnv, DispatchReport, IncidentRecord, RuntimeConfig,
    SimulatedProduction, Ticket,
};
use crate::clock::Clock;
use crate::context::{ExecutionContext, DEFAULT_MAX_CONTEXT_KEYS};
use crate::executor::{run_all, run_tsg, ExecOptions, Finding};
use crate::model::{
    default_base_keys, parse_document_with_id, validate_document, Audience, AutoTsgDoc, BaseKeys, Issue,
    ValidationReport,
};
use crate::prioritizer::{describe_action, gate, rank, summarize, ProductProfile, RankerClient};
use crate::query::{SourceRegistry, TableStore};
use crate::scheduler::{Scheduler, TickReport};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub product: ProductProfile,
    pub feedback: FeedbackPolicy,
    pub runtime: RuntimeConfig,
    pub context_rules: Vec<BaseContextRule>,
    pub max_context_keys: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            product: ProductProfile::default(),
            feedback: FeedbackPolicy::default(),
            runtime: RuntimeConfig::default(),
            context_rules: Vec::new(),
            max_context_keys: DEFAULT_MAX_CONTEXT_KEYS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub base_context: ExecutionContext,
    pub audience: Audience,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_statement: Option<String>,
    /// YAML documents to run alongside the registry (drafts under development).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tsgs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<Ticket>,
    /// Session time; defaults to the context's EndTime, then the clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<DateTime<Utc>>,
}

impl ExecuteRequest {
    pub fn new(base_context: ExecutionContext, audience: Audience) -> Self {
        ExecuteRequest {
            base_context,
            audience,
            problem_statement: None,
            tsgs: vec![],
            ticket: None,
            now: None,
        }
    }

    /// Execute request for the output of a context extraction.
    pub fn from_extracted(x: ExtractedContext, audience: Audience) -> Self {
        ExecuteRequest {
            problem_statement: Some(x.problem_statement),
            ticket: x.ticket,
            ..ExecuteRequest::new(x.base_context, audience)
        }
    }

    /// Hash of the canonical JSON form; equal requests share a session id.
    pub fn session_id(&self) -> String {
        let json = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecuteError {
    #[error("injected document {index} is invalid:\n{}", report.render())]
    InvalidTsg { index: usize, report: ValidationReport },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeedbackError {
    #[error("unknown document '{0}'")]
    UnknownTsg(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub approval: Approval,
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_item: Option<WorkItem>,
}

/// Parses and validates one document; parse failures come back as a report.
pub fn check_document(text: &str, fallback_id: &str, base_keys: &BaseKeys) -> Result<AutoTsgDoc, ValidationReport> {
    let doc = parse_document_with_id(text, fallback_id).map_err(|e| ValidationReport {
        errors: vec![Issue {
            code: "parse".into(),
            scope: fallback_id.into(),
            message: e.to_string(),
        }],
        warnings: vec![],
    })?;
    let report = validate_document(&doc, base_keys);
    if report.is_ok() {
        Ok(doc)
    } else {
        Err(report)
    }
}

/// The service: registry, telemetry, action runtime, feedback and ranker.
pub struct Engine {
    config: EngineConfig,
    base_keys: BaseKeys,
    registry: RwLock<TsgRegistry>,
    store: Arc<TableStore>,
    sources: SourceRegistry,
    runtime: ActionRuntime,
    feedback: Mutex<FeedbackStore>,
    ranker: Box<dyn RankerClient>,
    clock: Arc<dyn Clock>,
}

struct Caller<'a> {
    sources: &'a SourceRegistry,
    docs: &'a [AutoTsgDoc],
    audience: Audience,
    max_context_keys: usize,
}

impl CallTarget for Caller<'_> {
    fn call(&self, target: &str, base: &ExecutionContext, depth: u32, now: DateTime<Utc>) -> Result<Finding, CallError> {
        let doc = self
            .docs
            .iter()
            .find(|d| d.id == target)
            .ok_or_else(|| CallError::Unknown(target.to_string()))?;
        if !doc.enabled {
            return Err(CallError::Disabled(target.to_string()));
        }
        let mut opts = ExecOptions::new(self.audience, now);
        opts.call_depth = depth;
        opts.max_context_keys = self.max_context_keys;
        Ok(run_tsg(doc, self.sources, base, &opts))
    }
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        registry: TsgRegistry,
        store: Arc<TableStore>,
        source_names: &[String],
        ranker: Box<dyn RankerClient>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let production = SimulatedProduction::new(store.clone(), config.runtime.actions_table.clone());
        let runtime = ActionRuntime::new(config.runtime.clone(), Box::new(production));
        Engine {
            base_keys: default_base_keys(),
            registry: RwLock::new(registry),
            sources: SourceRegistry::local(store.clone(), source_names),
            store,
            runtime,
            feedback: Mutex::new(FeedbackStore::new()),
            ranker,
            clock,
            config,
        }
    }

    /// Persists incidents, operations and feedback under `dir`, restoring
    /// whatever is already there.
    pub fn with_state_dir(mut self, dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        self.runtime = self.runtime.with_log_dir(dir)?;
        self.feedback = Mutex::new(FeedbackStore::with_log_dir(dir)?);
        Ok(self)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<TableStore> {
        &self.store
    }

    pub fn sources(&self) -> &SourceRegistry {
        &self.sources
    }

    pub fn runtime(&self) -> &ActionRuntime {
        &self.runtime
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn registry(&self) -> std::sync::RwLockReadGuard<'_, TsgRegistry> {
        self.registry.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn tsgs(&self) -> Vec<TsgSummary> {
        self.registry().summaries()
    }

    pub fn tsg(&self, id: &str) -> Option<(TsgSummary, String)> {
        let reg = self.registry();
        reg.get(id).map(|d| (summary(d), reg.yaml(id).unwrap_or_default()))
    }

    pub fn docs(&self) -> Vec<AutoTsgDoc> {
        self.registry().docs().cloned().collect()
    }

    pub fn validate(&self, text: &str, fallback_id: &str) -> ValidationReport {
        match check_document(text, fallback_id, &self.base_keys) {
            Ok(doc) => validate_document(&doc, &self.base_keys),
            Err(r) => r,
        }
    }

    /// Stores a document under `id`, bumping the version of an existing one.
    pub fn put_tsg(&self, id: &str, text: &str) -> Result<TsgSummary, ValidationReport> {
        let mut doc = check_document(text, id, &self.base_keys)?;
        doc.id = id.to_string();
        let mut reg = self.registry.write().unwrap_or_else(|e| e.into_inner());
        reg.upsert(doc);
        Ok(summary(reg.get(id).expect("just stored")))
    }

    pub fn incidents(&self) -> Vec<IncidentRecord> {
        self.runtime.incidents().records().to_vec()
    }

    pub fn work_items(&self) -> Vec<WorkItem> {
        self.feedback.lock().unwrap_or_else(|e| e.into_inner()).work_items().to_vec()
    }

    pub fn extract(
        &self,
        product: &str,
        audience: Audience,
        incident: &IncidentPayload,
    ) -> Result<ExtractedContext, ExtractError> {
        extract_with_rules(&self.config.context_rules, product, audience, incident, &self.sources, self.clock.now())
    }

    pub fn execute(&self, req: &ExecuteRequest) -> Result<DiagnosticResponse, ExecuteError> {
        let mut injected = Vec::new();
        for (index, text) in req.tsgs.iter().enumerate() {
            let doc = check_document(text, &format!("injected-{index}"), &self.base_keys)
                .map_err(|report| ExecuteError::InvalidTsg { index, report })?;
            injected.push(doc);
        }
        let now = req
            .now
            .or(match req.base_context.get("EndTime") {
                Some(Value::DateTime(t)) => Some(*t),
                _ => None,
            })
            .unwrap_or_else(|| self.clock.now());

        let mut docs: Vec<AutoTsgDoc> = self
            .registry()
            .docs()
            .filter(|d| !injected.iter().any(|i| i.id == d.id))
            .cloned()
            .collect();
        docs.extend(injected);

        let mut opts = ExecOptions::new(req.audience, now);
        opts.max_context_keys = self.config.max_context_keys;
        let findings = run_all(&docs, &self.sources, &req.base_context, &opts);

        let problem = req.problem_statement.clone().unwrap_or_default();
        let profile = &self.config.product;
        let ranking = rank(profile, &problem, &findings, self.ranker.as_ref());
        let plan = gate(&ranking, &findings, &self.config.runtime);

        let caller = Caller {
            sources: &self.sources,
            docs: &docs,
            audience: req.audience,
            max_context_keys: self.config.max_context_keys,
        };
        let mut ticket = req.ticket.clone();
        let mut report = DispatchReport::default();
        for r in &ranking.findings {
            let mut f = findings[r.index].clone();
            f.actions.retain(|a| plan.execute.contains(a));
            if f.actions.is_empty() {
                continue;
            }
            let mut env = DispatchEnv {
                now,
                ticket: ticket.as_mut(),
                engine: Some(&caller),
            };
            let part = self.runtime.dispatch(&f, &mut env);
            report.outcomes.extend(part.outcomes);
            report.called.extend(part.called);
            report.evicted.extend(part.evicted);
        }
        let operations = self.runtime.process(now);

        let executed: Vec<String> = report
            .outcomes
            .iter()
            .filter(|o| !matches!(o.result, ActionResult::Rejected { .. }))
            .map(|o| match &o.result {
                ActionResult::TicketUpdated { note } => note.clone(),
                _ => format!("{} by {}/{}", o.kind, o.tsg_id, o.step),
            })
            .collect();
        let proposed: Vec<String> = plan.propose.iter().map(describe_action).collect();
        let summary = summarize(profile, &problem, &ranking, &findings, &executed, &proposed, self.ranker.as_ref());

        Ok(render_response(&SessionResult {
            session_id: req.session_id(),
            audience: req.audience,
            base_context: &req.base_context,
            problem_statement: &problem,
            findings: &findings,
            ranking: &ranking,
            plan: &plan,
            dispatch: &report,
            operations: &operations,
            summary: &summary,
            ticket: ticket.as_ref(),
        }))
    }

    /// Records a vote; a version whose approval falls below the policy is
    /// disabled and a work item raised for its owner.
    pub fn submit_feedback(&self, record: FeedbackRecord) -> Result<FeedbackResult, FeedbackError> {
        let mut reg = self.registry.write().unwrap_or_else(|e| e.into_inner());
        let doc = reg
            .get(&record.tsg_id)
            .ok_or_else(|| FeedbackError::UnknownTsg(record.tsg_id.clone()))?;
        let (current, owner) = (doc.version, doc.metadata.owner.clone());
        let at = record.timestamp;
        let mut fb = self.feedback.lock().unwrap_or_else(|e| e.into_inner());
        let approval = fb.add(record);
        let mut work_item = None;
        if approval.tsg_version == current && approval.should_disable(&self.config.feedback) {
            reg.set_enabled(&approval.tsg_id, false);
            let rate = approval.rate.unwrap_or(0.0);
            work_item = fb.raise_work_item(WorkItem {
                tsg_id: approval.tsg_id.clone(),
                tsg_version: current,
                owner,
                created_at: at,
                rate,
                votes: approval.votes(),
                message: format!(
                    "disabled: approval {:.0}% over {} votes is below {:.0}%",
                    rate * 100.0,
                    approval.votes(),
                    self.config.feedback.disable_threshold * 100.0
                ),
            });
        }
        let enabled = reg.get(&approval.tsg_id).is_some_and(|d| d.enabled);
        Ok(FeedbackResult {
            approval,
            enabled,
            work_item,
        })
    }

    pub fn approval(&self, tsg_id: &str) -> Option<Approval> {
        let version = self.registry().get(tsg_id)?.version;
        Some(self.feedback.lock().unwrap_or_else(|e| e.into_inner()).approval(tsg_id, version))
    }

    /// One scheduler pass over the registry at `now`.
    pub fn tick(&self, scheduler: &mut Scheduler, now: DateTime<Utc>) -> TickReport {
        let docs = self.docs();
        let caller = Caller {
            sources: &self.sources,
            docs: &docs,
            audience: Audience::Schedule,
            max_context_keys: self.config.max_context_keys,
        };
        scheduler.tick(&docs, &self.sources, &self.runtime, Some(&caller), now)
    }
}
