//! Scripted timelines: table mutations at given instants plus a scheduler
//! driven on a virtual clock.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ScheduleRegistry, Scheduler, TickReport};
use crate::actions::{ActionRuntime, IncidentRecord, RuntimeConfig, SimulatedProduction};
use crate::clock::{Clock, VirtualClock};
use crate::model::{default_base_keys, parse_document_with_id, validate_document, AutoTsgDoc};
use crate::query::{Column, SourceRegistry, TableStore};
use crate::value::{parse_value, Timespan, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mutation {
    pub at: DateTime<Utc>,
    pub table: String,
    /// `Name:type` headers; required when the table does not exist yet.
    #[serde(default)]
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_yaml::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub start: DateTime<Utc>,
    pub duration: Timespan,
    /// Clock advance per iteration; defaults to the smallest trigger frequency.
    #[serde(default)]
    pub step: Option<Timespan>,
    #[serde(default)]
    pub tsgs: Vec<PathBuf>,
    /// Fixture manifest loaded before the first tick.
    #[serde(default)]
    pub tables: Option<PathBuf>,
    #[serde(default)]
    pub schedule: Option<ScheduleRegistry>,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub mutations: Vec<Mutation>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub ticks: Vec<TickReport>,
    pub incidents: Vec<IncidentRecord>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s: Scenario = serde_yaml::from_str(&text).map_err(|e| ScenarioError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in &mut s.tsgs {
            *p = dir.join(&*p);
        }
        if let Some(t) = &mut s.tables {
            *t = dir.join(&*t);
        }
        Ok(s)
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn load_docs(paths: &[PathBuf]) -> Result<Vec<AutoTsgDoc>, ScenarioError> {
    let mut docs = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| ScenarioError::Io {
            path: p.clone(),
            source,
        })?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("tsg");
        let doc = parse_document_with_id(&text, stem).map_err(|e| invalid(p, e.to_string()))?;
        let report = validate_document(&doc, &default_base_keys());
        if !report.is_ok() {
            return Err(invalid(p, report.render()));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn cell(raw: &serde_yaml::Value, ty: ValueType) -> Result<Value, String> {
    let text = match raw {
        serde_yaml::Value::String(s) => s.clone(),
        serde_yaml::Value::Number(n) => n.to_string(),
        serde_yaml::Value::Bool(b) => b.to_string(),
        other => return Err(format!("unsupported cell {other:?}")),
    };
    parse_value(&text, ty).map_err(|e| e.to_string())
}

fn apply(store: &TableStore, m: &Mutation) -> Result<(), String> {
    let columns: Vec<Column> = if m.columns.is_empty() {
        store
            .get(&m.table)
            .map(|t| t.columns.clone())
            .ok_or_else(|| format!("table {} does not exist and no columns were given", m.table))?
    } else {
        m.columns
            .iter()
            .map(|h| {
                let (name, ty) = h.split_once(':').ok_or_else(|| format!("bad column header '{h}'"))?;
                Ok(Column::new(name.trim(), ty.trim().parse::<ValueType>().map_err(|e| e.to_string())?))
            })
            .collect::<Result<_, String>>()?
    };
    let rows = m
        .rows
        .iter()
        .map(|r| {
            if r.len() != columns.len() {
                return Err(format!("{}: row has {} cells, expected {}", m.table, r.len(), columns.len()));
            }
            r.iter().zip(&columns).map(|(v, c)| cell(v, c.ty)).collect()
        })
        .collect::<Result<Vec<Vec<Value>>, String>>()?;
    store.append_rows(&m.table, &columns, rows)
}

/// Plays a scenario from `start` to `start + duration` inclusive. Mutations
/// land before the tick at or after their timestamp.
pub fn run_scenario(scenario: &Scenario, origin: &Path) -> Result<SimulationReport, ScenarioError> {
    let docs = load_docs(&scenario.tsgs)?;
    let store = Arc::new(TableStore::new());
    let mut source_names = Vec::new();
    if let Some(m) = &scenario.tables {
        let manifest = store.load_manifest(m).map_err(|e| invalid(m, e.to_string()))?;
        source_names = manifest.sources;
    }
    let sources = SourceRegistry::local(store.clone(), &source_names);
    let production = SimulatedProduction::new(store.clone(), scenario.runtime.actions_table.clone());
    let runtime = ActionRuntime::new(scenario.runtime.clone(), Box::new(production));
    let mut scheduler = match &scenario.schedule {
        Some(r) => Scheduler::with_registry(r.clone()),
        None => Scheduler::new(),
    };

    let step = scenario
        .step
        .or_else(|| {
            docs.iter()
                .flat_map(|d| d.triggers.iter())
                .filter(|t| t.is_scheduled())
                .filter_map(|t| t.frequency)
                .min()
        })
        .unwrap_or(Timespan::from_minutes(5));
    if step.as_micros() <= 0 {
        return Err(invalid(origin, "step must be positive"));
    }

    let mut mutations: Vec<&Mutation> = scenario.mutations.iter().collect();
    mutations.sort_by_key(|m| m.at);
    let mut pending = mutations.into_iter().peekable();

    let clock = VirtualClock::new(scenario.start);
    let end = scenario.start + scenario.duration.to_chrono();
    let mut ticks = Vec::new();
    while clock.now() <= end {
        let now = clock.now();
        while let Some(m) = pending.next_if(|m| m.at <= now) {
            apply(&store, m).map_err(|e| invalid(origin, e))?;
        }
        ticks.push(scheduler.tick(&docs, &sources, &runtime, None, now));
        clock.advance(step);
    }
    let incidents = runtime.incidents().records().to_vec();
    Ok(SimulationReport { ticks, incidents })
}
