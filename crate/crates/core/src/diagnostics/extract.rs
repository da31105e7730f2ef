use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{Severity, Ticket};
use crate::context::{row_extensions, ExecutionContext};
use crate::model::Audience;
use crate::query::SourceRegistry;
use crate::template;
use crate::value::{parse_value, Timespan, Value, ValueType};

/// An incident as handed over by the incident platform.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncidentPayload {
    pub id: String,
    #[serde(default)]
    pub product: Option<String>,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub impact_start: Option<DateTime<Utc>>,
    #[serde(default)]
    pub impact_end: Option<DateTime<Utc>>,
    #[serde(default)]
    pub severity: Option<Severity>,
    #[serde(default)]
    pub owning_team: Option<String>,
    /// Free-form structured fields (`field` mappings read these).
    #[serde(default)]
    pub fields: BTreeMap<String, serde_json::Value>,
}

impl IncidentPayload {
    /// Title and description, the text regex mappings scan.
    pub fn text(&self) -> String {
        match (self.title.is_empty(), self.description.is_empty()) {
            (false, false) => format!("{}\n{}", self.title, self.description),
            (false, true) => self.title.clone(),
            _ => self.description.clone(),
        }
    }

    fn field(&self, name: &str) -> Option<String> {
        match name {
            "id" => Some(self.id.clone()),
            "title" => Some(self.title.clone()),
            "description" => Some(self.description.clone()),
            "owning_team" => self.owning_team.clone(),
            _ => self.fields.get(name).map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    /// Value of an incident field.
    Field(String),
    /// First capture group over the incident text.
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub key: String,
    #[serde(rename = "type", default = "string_type")]
    pub ty: ValueType,
    #[serde(flatten)]
    pub from: Extraction,
}

fn string_type() -> ValueType {
    ValueType::String
}

/// Telemetry lookup that fills keys the incident does not carry. Runs when
/// one of `keys` is missing and every placeholder of `query` is known; the
/// first row wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrichment {
    #[serde(default = "default_source")]
    pub source: String,
    pub query: String,
    pub keys: IndexMap<String, ValueType>,
}

fn default_source() -> String {
    "Kusto".into()
}

fn default_lookback() -> Timespan {
    Timespan::from_days(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseContextRule {
    pub product: String,
    pub audience: Audience,
    #[serde(default)]
    pub mappings: Vec<FieldMapping>,
    #[serde(default)]
    pub enrichment: Vec<Enrichment>,
    /// Impact window start when the incident has none: created minus this.
    #[serde(default = "default_lookback")]
    pub lookback: Timespan,
}

impl BaseContextRule {
    pub fn check(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.mappings {
            if !seen.insert(&m.key) {
                return Err(format!("rule {}/{}: key '{}' mapped twice", self.product, self.audience, m.key));
            }
            if let Extraction::Regex(r) = &m.from {
                let re = Regex::new(r).map_err(|e| format!("mapping '{}': {e}", m.key))?;
                if re.captures_len() != 2 {
                    return Err(format!("mapping '{}': regex needs exactly one capture group", m.key));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedContext {
    pub base_context: ExecutionContext,
    pub problem_statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<Ticket>,
    /// Keys the rule maps that could not be found.
    #[serde(default)]
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no base context rule for product '{product}' and audience {audience}")]
    NoRule { product: String, audience: Audience },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
}

/// Applies the mappings in order, then enrichment lookups for keys still
/// missing, then the impact window. Missing keys stay absent.
pub fn extract_base_context(
    rule: &BaseContextRule,
    incident: &IncidentPayload,
    sources: &SourceRegistry,
    now: DateTime<Utc>,
) -> Result<ExtractedContext, ExtractError> {
    rule.check().map_err(ExtractError::InvalidRule)?;
    let text = incident.text();
    let mut ctx = ExecutionContext::new();
    for m in &rule.mappings {
        let raw = match &m.from {
            Extraction::Field(f) => incident.field(f),
            Extraction::Regex(r) => Regex::new(r)
                .expect("checked above")
                .captures(&text)
                .and_then(|c| c.get(1))
                .map(|g| g.as_str().to_string()),
        };
        let Some(raw) = raw.filter(|r| !r.trim().is_empty()) else { continue };
        if let Ok(v) = parse_value(raw.trim(), m.ty) {
            ctx = ctx.with(m.key.clone(), v);
        }
    }

    let start = incident.impact_start.unwrap_or(incident.created_at - rule.lookback.to_chrono());
    let end = incident.impact_end.unwrap_or(now);
    ctx = ctx
        .with("StartTime", Value::DateTime(start))
        .with("EndTime", Value::DateTime(end));

    for e in &rule.enrichment {
        if e.keys.keys().all(|k| ctx.contains(k)) {
            continue;
        }
        let Ok(query) = template::substitute(&e.query, &ctx) else { continue };
        let Ok(table) = sources.execute(&e.source, &query) else { continue };
        let Ok(rows) = row_extensions(&table, &e.keys) else { continue };
        if let Some(first) = rows.first() {
            for (k, v) in first.iter() {
                if !ctx.contains(k) {
                    ctx = ctx.with(k, v.clone());
                }
            }
        }
    }

    let missing = rule
        .mappings
        .iter()
        .map(|m| m.key.clone())
        .chain(rule.enrichment.iter().flat_map(|e| e.keys.keys().cloned()))
        .filter(|k| !ctx.contains(k))
        .fold(Vec::new(), |mut acc, k| {
            if !acc.contains(&k) {
                acc.push(k);
            }
            acc
        });

    let ticket = incident.severity.map(|severity| Ticket {
        id: incident.id.clone(),
        severity,
        owning_team: incident.owning_team.clone().unwrap_or_default(),
        notes: vec![],
    });
    Ok(ExtractedContext {
        base_context: ctx,
        problem_statement: text,
        ticket,
        missing,
    })
}

/// Looks up the rule for (product, audience) and extracts.
pub fn extract_with_rules(
    rules: &[BaseContextRule],
    product: &str,
    audience: Audience,
    incident: &IncidentPayload,
    sources: &SourceRegistry,
    now: DateTime<Utc>,
) -> Result<ExtractedContext, ExtractError> {
    let rule = rules
        .iter()
        .find(|r| r.product == product && r.audience == audience)
        .ok_or_else(|| ExtractError::NoRule {
            product: product.to_string(),
            audience,
        })?;
    extract_base_context(rule, incident, sources, now)
}
