//! Fixed-frequency driver for scheduled triggers on an injectable clock.

mod scenario;

use std::borrow::Borrow;
use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use scenario::{run_scenario, Mutation, Scenario, ScenarioError, SimulationReport};

use crate::actions::{ActionOutcome, ActionRuntime, CallTarget, DispatchEnv, OpRecord};
use crate::context::ExecutionContext;
use crate::executor::{run_tsg, ExecOptions, Finding, StepStatus};
use crate::model::{Audience, AutoTsgDoc, StepKind};
use crate::query::SourceRegistry;
use crate::value::{Timespan, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub tsg_id: String,
    pub trigger: usize,
    pub frequency: Timespan,
    pub last_tick: Option<DateTime<Utc>>,
}

impl ScheduleState {
    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.last_tick.map(|t| t + self.frequency.to_chrono())
    }

    pub fn is_due(&self, now: DateTime<Utc>) -> bool {
        self.next_due().is_none_or(|due| now >= due)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct Window {
    pub start_time: DateTime<Utc>,
    pub time_stamp: DateTime<Utc>,
}

impl Window {
    /// The whole base context of a scheduled run.
    pub fn base_context(&self) -> ExecutionContext {
        [
            ("StartTime".to_string(), Value::DateTime(self.start_time)),
            ("TimeStamp".to_string(), Value::DateTime(self.time_stamp)),
        ]
        .into_iter()
        .collect()
    }
}

/// Window for a tick at `now`, or `None` when the trigger is not due. Missed
/// ticks collapse: the window always starts at the previous tick.
pub fn compute_window(state: &ScheduleState, now: DateTime<Utc>) -> Option<Window> {
    match state.last_tick {
        None => Some(Window {
            start_time: now - state.frequency.to_chrono(),
            time_stamp: now,
        }),
        Some(last) if state.is_due(now) => Some(Window {
            start_time: last,
            time_stamp: now,
        }),
        Some(_) => None,
    }
}

/// Groups contexts by their values for `keys`, in order of first appearance.
pub fn split_by_scoping_keys(
    contexts: &[ExecutionContext],
    keys: &[String],
) -> Vec<(String, Vec<ExecutionContext>)> {
    let mut out: Vec<(String, Vec<ExecutionContext>)> = Vec::new();
    for c in contexts {
        let k = c.project(keys).canonical();
        match out.iter_mut().find(|(s, _)| *s == k) {
            Some((_, group)) => group.push(c.clone()),
            None => out.push((k, vec![c.clone()])),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Fired,
    NoData,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub scoping: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgRun {
    pub tsg_id: String,
    pub trigger: String,
    pub window: Window,
    pub status: RunStatus,
    pub ensembles: Vec<Ensemble>,
    pub actions: Vec<ActionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub at: DateTime<Utc>,
    pub runs: Vec<TsgRun>,
    /// Queue entries executed, rejected or displaced during this tick.
    pub operations: Vec<OpRecord>,
    pub mitigated: Vec<String>,
}

impl TickReport {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty() && self.operations.is_empty() && self.mitigated.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub tsg: String,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

/// Which documents the scheduler drives. Without a registry every enabled
/// scheduled document runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleRegistry(pub Vec<RegistryEntry>);

impl ScheduleRegistry {
    pub fn allows(&self, id: &str) -> bool {
        self.0.iter().any(|e| e.tsg == id && e.enabled)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    states: BTreeMap<(String, usize), ScheduleState>,
    registry: Option<ScheduleRegistry>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_registry(registry: ScheduleRegistry) -> Self {
        Scheduler {
            states: BTreeMap::new(),
            registry: Some(registry),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = &ScheduleState> {
        self.states.values()
    }

    fn sync<D: Borrow<AutoTsgDoc>>(&mut self, docs: &[D]) {
        for doc in docs.iter().map(Borrow::borrow) {
            if !doc.enabled || self.registry.as_ref().is_some_and(|r| !r.allows(&doc.id)) {
                continue;
            }
            for (i, t) in doc.triggers.iter().enumerate() {
                let Some(freq) = t.frequency.filter(|_| t.is_scheduled()) else { continue };
                let st = self
                    .states
                    .entry((doc.id.clone(), i))
                    .or_insert_with(|| ScheduleState {
                        tsg_id: doc.id.clone(),
                        trigger: i,
                        frequency: freq,
                        last_tick: None,
                    });
                st.frequency = freq;
            }
        }
    }

    /// Runs every due trigger at `now`, dispatches what they request, drains
    /// the operation queue and expires lapsed incidents.
    pub fn tick<D: Borrow<AutoTsgDoc> + Sync>(
        &mut self,
        docs: &[D],
        sources: &SourceRegistry,
        runtime: &ActionRuntime,
        engine: Option<&dyn CallTarget>,
        now: DateTime<Utc>,
    ) -> TickReport {
        self.sync(docs);
        let by_id: BTreeMap<&str, &AutoTsgDoc> = docs
            .iter()
            .map(Borrow::borrow)
            .filter(|d| d.enabled)
            .map(|d| (d.id.as_str(), d))
            .collect();
        let mut due: Vec<(AutoTsgDoc, Window)> = Vec::new();
        for st in self.states.values_mut() {
            let Some(doc) = by_id.get(st.tsg_id.as_str()) else { continue };
            let Some(window) = compute_window(st, now) else { continue };
            st.last_tick = Some(now);
            // the trigger alone, so sibling triggers keep their own cadence
            let mut single = (*doc).clone();
            single.triggers = vec![doc.triggers[st.trigger].clone()];
            due.push((single, window));
        }

        let run = |(doc, w): &(AutoTsgDoc, Window)| {
            run_tsg(doc, sources, &w.base_context(), &ExecOptions::new(Audience::Schedule, now))
        };
        #[cfg(feature = "parallel")]
        let findings: Vec<Finding> = {
            use rayon::prelude::*;
            due.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let findings: Vec<Finding> = due.iter().map(run).collect();

        let mut report = TickReport {
            at: now,
            runs: Vec::new(),
            operations: Vec::new(),
            mitigated: Vec::new(),
        };
        for ((doc, window), finding) in due.iter().zip(findings) {
            let trigger = &doc.triggers[0];
            let mut env = DispatchEnv::new(now);
            env.engine = engine;
            let dispatched = runtime.dispatch(&finding, &mut env);
            report.operations.extend(dispatched.evicted);
            report.runs.push(summarize(&finding, &trigger.name, &trigger.scoping(), *window, dispatched.outcomes));
        }
        report.operations.extend(runtime.process(now));
        report.mitigated = runtime.expire_incidents(now);
        report
    }
}

fn summarize(
    finding: &Finding,
    trigger: &str,
    scoping: &[String],
    window: Window,
    actions: Vec<ActionOutcome>,
) -> TsgRun {
    let head = finding.outcomes.iter().find(|o| o.kind == StepKind::Trigger);
    let status = match head.map(|o| o.status) {
        Some(StepStatus::Fired) => RunStatus::Fired,
        Some(StepStatus::Errored) => RunStatus::Errored,
        _ if finding.errored => RunStatus::Errored,
        _ => RunStatus::NoData,
    };
    let ensembles = head
        .filter(|o| o.status == StepStatus::Fired)
        .map(|o| {
            split_by_scoping_keys(&o.variations, scoping)
                .into_iter()
                .map(|(scoping, group)| Ensemble {
                    scoping,
                    rows: group.len(),
                })
                .collect()
        })
        .unwrap_or_default();
    let error = finding
        .outcomes
        .iter()
        .find_map(|o| o.error.as_ref().map(|e| format!("{}: {e}", o.step)));
    TsgRun {
        tsg_id: finding.tsg_id.clone(),
        trigger: trigger.to_string(),
        window,
        status,
        ensembles,
        actions,
        error,
    }
}
