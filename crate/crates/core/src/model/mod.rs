//! Typed Auto-TSG documents.

mod parse;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::context::AddedContext;
use crate::template;
use crate::value::Timespan;

pub use parse::{parse_document, parse_document_with_id, to_yaml, ParseError};
pub use validate::{
    default_base_keys, topological_order, validate_document, BaseKeys, Issue, ValidationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TsgType {
    Informational,
    Warning,
    Critical,
}

impl TsgType {
    /// Higher ranks first: Critical > Warning > Informational.
    pub fn precedence(self) -> u8 {
        match self {
            TsgType::Critical => 2,
            TsgType::Warning => 1,
            TsgType::Informational => 0,
        }
    }
}

impl fmt::Display for TsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Audience {
    CustomerVisible,
    InternalOnDemand,
    SupportTicket,
    InternalTicket,
    Schedule,
}

impl Audience {
    pub const ALL: [Audience; 5] = [
        Audience::CustomerVisible,
        Audience::InternalOnDemand,
        Audience::SupportTicket,
        Audience::InternalTicket,
        Audience::Schedule,
    ];

    pub fn has_ticket(self) -> bool {
        matches!(self, Audience::SupportTicket | Audience::InternalTicket)
    }
}

impl fmt::Display for Audience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Audience {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Audience::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown audience '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub title: String,
    pub description: String,
    pub owner: String,
    pub tsg_type: TsgType,
    pub topics: Vec<String>,
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub source: String,
    pub explanation: Option<String>,
    pub query_text: String,
    pub added_context: AddedContext,
    pub scoping_context: Vec<String>,
}

impl QuerySpec {
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut keys = template::placeholders(&self.query_text);
        if let Some(e) = &self.explanation {
            keys.extend(template::placeholders(e));
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerDef {
    pub name: String,
    pub audiences: Vec<Audience>,
    pub frequency: Option<Timespan>,
    pub queries: Vec<QuerySpec>,
    pub next_steps: Vec<String>,
}

impl TriggerDef {
    pub fn is_scheduled(&self) -> bool {
        self.audiences.contains(&Audience::Schedule)
    }

    /// Keys the trigger needs from the base context: placeholders of each
    /// query not supplied by an earlier query of the same trigger.
    pub fn base_keys(&self) -> BTreeSet<String> {
        let mut provided = BTreeSet::new();
        let mut needed = BTreeSet::new();
        for q in &self.queries {
            for k in template::placeholders(&q.query_text) {
                if !provided.contains(&k) {
                    needed.insert(k);
                }
            }
            provided.extend(q.added_context.keys().cloned());
        }
        needed
    }

    pub fn scoping(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for q in &self.queries {
            for k in &q.scoping_context {
                if !out.contains(k) {
                    out.push(k.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckDef {
    pub name: String,
    pub audiences: Option<Vec<Audience>>,
    pub filter: Option<String>,
    pub query: QuerySpec,
    pub next_steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationDef {
    pub name: String,
    pub audiences: Option<Vec<Audience>>,
    pub filter: Option<String>,
    pub explanation: String,
    pub next_steps: Vec<String>,
}

/// Action kinds. The five DSL kinds parse from documents; `Production`
/// covers further production operations wired in programmatically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ActionKind {
    IncreaseSeverity,
    RouteTicket,
    CreateIncident,
    CancelManagementOperation,
    CallAutoTsg,
    Production(String),
}

impl ActionKind {
    pub const DSL: [ActionKind; 5] = [
        ActionKind::IncreaseSeverity,
        ActionKind::RouteTicket,
        ActionKind::CreateIncident,
        ActionKind::CancelManagementOperation,
        ActionKind::CallAutoTsg,
    ];

    pub fn name(&self) -> &str {
        match self {
            ActionKind::IncreaseSeverity => "IncreaseSeverity",
            ActionKind::RouteTicket => "RouteTicket",
            ActionKind::CreateIncident => "CreateIncident",
            ActionKind::CancelManagementOperation => "CancelManagementOperation",
            ActionKind::CallAutoTsg => "CallAutoTsg",
            ActionKind::Production(n) => n,
        }
    }

    /// Parses one of the five DSL kinds.
    pub fn from_dsl(s: &str) -> Option<ActionKind> {
        ActionKind::DSL.into_iter().find(|k| k.name() == s)
    }

    pub fn mandatory_params(&self) -> &'static [&'static str] {
        match self {
            ActionKind::IncreaseSeverity => &["NewSeverity"],
            ActionKind::CreateIncident => &["Title", "OwningService", "OwningTeam"],
            ActionKind::CancelManagementOperation => &["OperationId", "Reason"],
            ActionKind::CallAutoTsg => &["TargetTsg"],
            ActionKind::RouteTicket => &["TeamName"],
            ActionKind::Production(_) => &[],
        }
    }

    /// Kinds that touch production and are throttled by the queue.
    pub fn is_impactful(&self) -> bool {
        matches!(
            self,
            ActionKind::CancelManagementOperation | ActionKind::Production(_)
        )
    }

    pub fn is_ticket_action(&self) -> bool {
        matches!(self, ActionKind::IncreaseSeverity | ActionKind::RouteTicket)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<ActionKind> for String {
    fn from(k: ActionKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for ActionKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Ok(ActionKind::from_dsl(&s).unwrap_or(ActionKind::Production(s)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDef {
    pub name: String,
    pub audiences: Option<Vec<Audience>>,
    pub filter: Option<String>,
    pub kind: ActionKind,
    pub params: IndexMap<String, String>,
    pub ttl: Option<Timespan>,
    pub next_steps: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Trigger,
    Check,
    Explanation,
    Action,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Trigger => "trigger",
            StepKind::Check => "check",
            StepKind::Explanation => "explanation",
            StepKind::Action => "action",
        })
    }
}

/// Borrowed view of any step.
#[derive(Debug, Clone, Copy)]
pub enum StepRef<'a> {
    Trigger(&'a TriggerDef),
    Check(&'a CheckDef),
    Explanation(&'a ExplanationDef),
    Action(&'a ActionDef),
}

impl<'a> StepRef<'a> {
    pub fn name(&self) -> &'a str {
        match self {
            StepRef::Trigger(t) => &t.name,
            StepRef::Check(c) => &c.name,
            StepRef::Explanation(e) => &e.name,
            StepRef::Action(a) => &a.name,
        }
    }

    pub fn kind(&self) -> StepKind {
        match self {
            StepRef::Trigger(_) => StepKind::Trigger,
            StepRef::Check(_) => StepKind::Check,
            StepRef::Explanation(_) => StepKind::Explanation,
            StepRef::Action(_) => StepKind::Action,
        }
    }

    pub fn next_steps(&self) -> &'a [String] {
        match self {
            StepRef::Trigger(t) => &t.next_steps,
            StepRef::Check(c) => &c.next_steps,
            StepRef::Explanation(e) => &e.next_steps,
            StepRef::Action(a) => &a.next_steps,
        }
    }

    pub fn audiences(&self) -> Option<&'a [Audience]> {
        match self {
            StepRef::Trigger(t) => Some(&t.audiences),
            StepRef::Check(c) => c.audiences.as_deref(),
            StepRef::Explanation(e) => e.audiences.as_deref(),
            StepRef::Action(a) => a.audiences.as_deref(),
        }
    }

    pub fn filter(&self) -> Option<&'a str> {
        match self {
            StepRef::Trigger(_) => None,
            StepRef::Check(c) => c.filter.as_deref(),
            StepRef::Explanation(e) => e.filter.as_deref(),
            StepRef::Action(a) => a.filter.as_deref(),
        }
    }

    /// Every template the step renders or evaluates.
    pub fn templates(&self) -> Vec<&'a str> {
        let mut out = Vec::new();
        match self {
            StepRef::Trigger(t) => {
                for q in &t.queries {
                    out.push(q.query_text.as_str());
                    out.extend(q.explanation.as_deref());
                }
            }
            StepRef::Check(c) => {
                out.push(c.query.query_text.as_str());
                out.extend(c.query.explanation.as_deref());
            }
            StepRef::Explanation(e) => out.push(e.explanation.as_str()),
            StepRef::Action(a) => out.extend(a.params.values().map(String::as_str)),
        }
        out.extend(self.filter());
        out
    }

    /// Keys the step adds to the context itself.
    pub fn added_keys(&self) -> BTreeSet<String> {
        match self {
            StepRef::Trigger(t) => t
                .queries
                .iter()
                .flat_map(|q| q.added_context.keys().cloned())
                .collect(),
            StepRef::Check(c) => c.query.added_context.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }

    /// Union of all placeholders in the step's templates.
    pub fn placeholders(&self) -> BTreeSet<String> {
        self.templates()
            .into_iter()
            .flat_map(template::placeholders)
            .collect()
    }
}

/// Placeholder keys of a step, minus the keys it provides itself. This is
/// the projection used for memoization.
pub fn infer_required_keys(step: StepRef<'_>) -> BTreeSet<String> {
    let own = step.added_keys();
    step.placeholders()
        .into_iter()
        .filter(|k| !own.contains(k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoTsgDoc {
    pub id: String,
    pub version: u64,
    pub metadata: Metadata,
    pub triggers: Vec<TriggerDef>,
    pub checks: Vec<CheckDef>,
    pub explanations: Vec<ExplanationDef>,
    pub actions: Vec<ActionDef>,
    pub enabled: bool,
}

impl AutoTsgDoc {
    pub fn step(&self, name: &str) -> Option<StepRef<'_>> {
        self.steps().find(|s| s.name() == name)
    }

    /// Triggers, then checks, explanations and actions, in declaration order.
    pub fn steps(&self) -> impl Iterator<Item = StepRef<'_>> {
        self.triggers
            .iter()
            .map(StepRef::Trigger)
            .chain(self.checks.iter().map(StepRef::Check))
            .chain(self.explanations.iter().map(StepRef::Explanation))
            .chain(self.actions.iter().map(StepRef::Action))
    }

    pub fn topics(&self) -> &[String] {
        &self.metadata.topics
    }

    pub fn is_scheduled(&self) -> bool {
        self.triggers.iter().any(TriggerDef::is_scheduled)
    }

    /// Every query template in the document (used for redaction checks).
    pub fn query_texts(&self) -> Vec<&str> {
        self.triggers
            .iter()
            .flat_map(|t| t.queries.iter().map(|q| q.query_text.as_str()))
            .chain(self.checks.iter().map(|c| c.query.query_text.as_str()))
            .collect()
    }
}
