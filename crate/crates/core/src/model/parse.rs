use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_yaml::Value as Yaml;

use super::{
    ActionDef, ActionKind, Audience, AutoTsgDoc, CheckDef, ExplanationDef, Metadata, QuerySpec,
    TriggerDef, TsgType,
};
use crate::value::{Timespan, ValueType};

/// A document that could not be turned into a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ParseError {
    fn msg(message: impl Into<String>) -> Self {
        ParseError {
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

fn is_empty<T>(v: &[T]) -> bool {
    v.is_empty()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawDoc {
    metadata: RawMetadata,
    #[serde(default, skip_serializing_if = "is_empty")]
    triggers: Vec<RawTrigger>,
    #[serde(default, skip_serializing_if = "is_empty")]
    checks: Vec<RawCheck>,
    #[serde(default, skip_serializing_if = "is_empty")]
    explanations: Vec<RawExplanation>,
    #[serde(default, skip_serializing_if = "is_empty")]
    actions: Vec<RawAction>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    title: String,
    #[serde(default)]
    description: String,
    owner: String,
    #[serde(rename = "Type")]
    tsg_type: TsgType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topics: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawQuery {
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
    query_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    added_context: Option<IndexMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scoping_context: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawSchedule {
    frequency: Yaml,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawThrottle {
    time_to_live: Yaml,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawTrigger {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    audiences: Vec<Audience>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule_settings: Option<RawSchedule>,
    #[serde(default)]
    queries: Vec<RawQuery>,
    #[serde(default, skip_serializing_if = "is_empty")]
    next_steps: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawCheck {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audiences: Option<Vec<Audience>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<String>,
    query: RawQuery,
    #[serde(default, skip_serializing_if = "is_empty")]
    next_steps: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawExplanation {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audiences: Option<Vec<Audience>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<String>,
    explanation: String,
    #[serde(default, skip_serializing_if = "is_empty")]
    next_steps: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "PascalCase")]
struct RawAction {
    name: String,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audiences: Option<Vec<Audience>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    throttling_settings: Option<RawThrottle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    new_severity: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    owning_service: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    owning_team: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    operation_id: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_tsg: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    team_name: Option<Yaml>,
    #[serde(default, skip_serializing_if = "is_empty")]
    next_steps: Vec<String>,
}

impl RawAction {
    fn params(&self) -> [(&'static str, &Option<Yaml>); 8] {
        [
            ("NewSeverity", &self.new_severity),
            ("Title", &self.title),
            ("OwningService", &self.owning_service),
            ("OwningTeam", &self.owning_team),
            ("OperationId", &self.operation_id),
            ("Reason", &self.reason),
            ("TargetTsg", &self.target_tsg),
            ("TeamName", &self.team_name),
        ]
    }

    fn param_slot(&mut self, name: &str) -> Option<&mut Option<Yaml>> {
        Some(match name {
            "NewSeverity" => &mut self.new_severity,
            "Title" => &mut self.title,
            "OwningService" => &mut self.owning_service,
            "OwningTeam" => &mut self.owning_team,
            "OperationId" => &mut self.operation_id,
            "Reason" => &mut self.reason,
            "TargetTsg" => &mut self.target_tsg,
            "TeamName" => &mut self.team_name,
            _ => return None,
        })
    }
}

/// Scalar YAML values as text. `{Key}` written unquoted is a flow mapping
/// `{Key: null}`; it is read back as the placeholder it was meant to be.
fn scalar_text(v: &Yaml, what: &str) -> Result<String, ParseError> {
    match v {
        Yaml::String(s) => Ok(s.clone()),
        Yaml::Number(n) => Ok(n.to_string()),
        Yaml::Bool(b) => Ok(b.to_string()),
        Yaml::Mapping(m) if m.len() == 1 => match m.iter().next() {
            Some((Yaml::String(k), Yaml::Null)) => Ok(format!("{{{k}}}")),
            _ => Err(ParseError::msg(format!("{what} must be a scalar"))),
        },
        _ => Err(ParseError::msg(format!("{what} must be a scalar"))),
    }
}

fn timespan(v: &Yaml, what: &str) -> Result<Timespan, ParseError> {
    let text = scalar_text(v, what)?;
    let ts = Timespan::parse(&text).map_err(|e| ParseError::msg(format!("{what}: {e}")))?;
    if ts <= Timespan::ZERO {
        return Err(ParseError::msg(format!("{what} must be positive, got {text}")));
    }
    Ok(ts)
}

fn query(raw: RawQuery, scope: &str) -> Result<QuerySpec, ParseError> {
    let mut added = IndexMap::new();
    for (k, ty) in raw.added_context.unwrap_or_default() {
        let ty: ValueType = ty
            .parse()
            .map_err(|e| ParseError::msg(format!("{scope}: AddedContext '{k}': {e}")))?;
        added.insert(k, ty);
    }
    let scoping = raw.scoping_context.unwrap_or_default();
    for k in &scoping {
        if !added.contains_key(k) {
            return Err(ParseError::msg(format!(
                "{scope}: ScopingContext key '{k}' is not declared in AddedContext"
            )));
        }
    }
    Ok(QuerySpec {
        source: raw.source,
        explanation: raw.explanation,
        query_text: raw.query_text,
        added_context: added,
        scoping_context: scoping,
    })
}

fn slug(title: &str) -> String {
    let mut out = String::new();
    for c in title.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Parses a document; the id comes from `Metadata.Id` or the title.
pub fn parse_document(text: &str) -> Result<AutoTsgDoc, ParseError> {
    parse_inner(text, None)
}

/// Parses a document whose id defaults to `fallback_id` (usually the file stem).
pub fn parse_document_with_id(text: &str, fallback_id: &str) -> Result<AutoTsgDoc, ParseError> {
    parse_inner(text, Some(fallback_id))
}

fn parse_inner(text: &str, fallback_id: Option<&str>) -> Result<AutoTsgDoc, ParseError> {
    let raw: RawDoc = serde_yaml::from_str(text).map_err(|e| {
        let loc = e.location();
        ParseError {
            message: e.to_string(),
            line: loc.as_ref().map(|l| l.line()),
            column: loc.as_ref().map(|l| l.column()),
        }
    })?;

    let m = raw.metadata;
    let id = m
        .id
        .clone()
        .or_else(|| fallback_id.map(str::to_string))
        .unwrap_or_else(|| slug(&m.title));
    let metadata = Metadata {
        title: m.title,
        description: m.description,
        owner: m.owner,
        tsg_type: m.tsg_type,
        topics: m.topics.unwrap_or_default(),
        id: m.id,
    };

    // name -> where it was declared, for duplicate reporting
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut declare = |name: &str, at: String| -> Result<(), ParseError> {
        if name.trim().is_empty() {
            return Err(ParseError::msg(format!("{at}: step name must not be empty")));
        }
        if let Some(first) = seen.get(name) {
            return Err(ParseError::msg(format!(
                "duplicate step name '{name}' at {first} and {at}"
            )));
        }
        seen.insert(name.to_string(), at);
        Ok(())
    };

    if raw.triggers.is_empty() {
        return Err(ParseError::msg("document requires at least one trigger"));
    }
    let mut triggers = Vec::new();
    for (i, t) in raw.triggers.into_iter().enumerate() {
        let name = t.name.unwrap_or_else(|| format!("trigger-{}", i + 1));
        let at = format!("Triggers[{i}]");
        declare(&name, at.clone())?;
        if t.audiences.is_empty() {
            return Err(ParseError::msg(format!("{at}: trigger requires at least one audience")));
        }
        if t.queries.is_empty() {
            return Err(ParseError::msg(format!("{at}: trigger requires at least one query")));
        }
        let frequency = t
            .schedule_settings
            .map(|s| timespan(&s.frequency, &format!("{at}: Frequency")))
            .transpose()?;
        let queries = t
            .queries
            .into_iter()
            .enumerate()
            .map(|(j, q)| query(q, &format!("{at}.Queries[{j}]")))
            .collect::<Result<_, _>>()?;
        triggers.push(TriggerDef {
            name,
            audiences: t.audiences,
            frequency,
            queries,
            next_steps: t.next_steps,
        });
    }

    let mut checks = Vec::new();
    for (i, c) in raw.checks.into_iter().enumerate() {
        let at = format!("Checks[{i}]");
        declare(&c.name, at.clone())?;
        checks.push(CheckDef {
            query: query(c.query, &at)?,
            name: c.name,
            audiences: c.audiences,
            filter: c.filter,
            next_steps: c.next_steps,
        });
    }

    let mut explanations = Vec::new();
    for (i, e) in raw.explanations.into_iter().enumerate() {
        let at = format!("Explanations[{i}]");
        declare(&e.name, at.clone())?;
        if e.explanation.trim().is_empty() {
            return Err(ParseError::msg(format!("{at}: explanation must not be empty")));
        }
        explanations.push(ExplanationDef {
            name: e.name,
            audiences: e.audiences,
            filter: e.filter,
            explanation: e.explanation,
            next_steps: e.next_steps,
        });
    }

    let mut actions = Vec::new();
    for (i, a) in raw.actions.into_iter().enumerate() {
        let at = format!("Actions[{i}]");
        declare(&a.name, at.clone())?;
        let kind = ActionKind::from_dsl(&a.action).ok_or_else(|| {
            ParseError::msg(format!("{at}: unknown action kind '{}'", a.action))
        })?;
        let mandatory = kind.mandatory_params();
        let mut params = IndexMap::new();
        for (pname, value) in a.params() {
            let Some(v) = value else { continue };
            if !mandatory.contains(&pname) {
                return Err(ParseError::msg(format!(
                    "{at}: parameter {pname} does not apply to {kind}"
                )));
            }
            params.insert(pname.to_string(), scalar_text(v, &format!("{at}: {pname}"))?);
        }
        for p in mandatory {
            if !params.contains_key(*p) {
                return Err(ParseError::msg(format!("{at}: {kind} requires parameter {p}")));
            }
        }
        let ttl = a
            .throttling_settings
            .map(|t| timespan(&t.time_to_live, &format!("{at}: TimeToLive")))
            .transpose()?;
        actions.push(ActionDef {
            name: a.name,
            audiences: a.audiences,
            filter: a.filter,
            kind,
            params,
            ttl,
            next_steps: a.next_steps,
        });
    }

    Ok(AutoTsgDoc {
        id,
        version: 1,
        metadata,
        triggers,
        checks,
        explanations,
        actions,
        enabled: true,
    })
}

fn raw_query(q: &QuerySpec) -> RawQuery {
    RawQuery {
        source: q.source.clone(),
        explanation: q.explanation.clone(),
        query_text: q.query_text.clone(),
        added_context: (!q.added_context.is_empty()).then(|| {
            q.added_context
                .iter()
                .map(|(k, t)| (k.clone(), t.to_string()))
                .collect()
        }),
        scoping_context: (!q.scoping_context.is_empty()).then(|| q.scoping_context.clone()),
    }
}

/// Serializes a document back to the DSL. Parsing the output with the same
/// fallback id yields an equal document.
pub fn to_yaml(doc: &AutoTsgDoc) -> String {
    let raw = RawDoc {
        metadata: RawMetadata {
            id: doc.metadata.id.clone(),
            title: doc.metadata.title.clone(),
            description: doc.metadata.description.clone(),
            owner: doc.metadata.owner.clone(),
            tsg_type: doc.metadata.tsg_type,
            topics: (!doc.metadata.topics.is_empty()).then(|| doc.metadata.topics.clone()),
        },
        triggers: doc
            .triggers
            .iter()
            .enumerate()
            .map(|(i, t)| RawTrigger {
                name: (t.name != format!("trigger-{}", i + 1)).then(|| t.name.clone()),
                audiences: t.audiences.clone(),
                schedule_settings: t.frequency.map(|f| RawSchedule {
                    frequency: Yaml::String(f.to_string()),
                }),
                queries: t.queries.iter().map(raw_query).collect(),
                next_steps: t.next_steps.clone(),
            })
            .collect(),
        checks: doc
            .checks
            .iter()
            .map(|c| RawCheck {
                name: c.name.clone(),
                audiences: c.audiences.clone(),
                filter: c.filter.clone(),
                query: raw_query(&c.query),
                next_steps: c.next_steps.clone(),
            })
            .collect(),
        explanations: doc
            .explanations
            .iter()
            .map(|e| RawExplanation {
                name: e.name.clone(),
                audiences: e.audiences.clone(),
                filter: e.filter.clone(),
                explanation: e.explanation.clone(),
                next_steps: e.next_steps.clone(),
            })
            .collect(),
        actions: doc
            .actions
            .iter()
            .map(|a| {
                let mut raw = RawAction {
                    name: a.name.clone(),
                    action: a.kind.to_string(),
                    audiences: a.audiences.clone(),
                    filter: a.filter.clone(),
                    throttling_settings: a.ttl.map(|t| RawThrottle {
                        time_to_live: Yaml::String(t.to_string()),
                    }),
                    next_steps: a.next_steps.clone(),
                    ..RawAction::default()
                };
                for (k, v) in &a.params {
                    if let Some(slot) = raw.param_slot(k) {
                        *slot = Some(Yaml::String(v.clone()));
                    }
                }
                raw
            })
            .collect(),
    };
    serde_yaml::to_string(&raw).expect("document serializes")
}
