//! Orders findings against a problem statement through a pluggable model
//! client, gates actions on confidence, and writes the incident summary.

mod client;
mod parse;
mod prompt;
mod summary;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use client::{prompt_hash, ClientError, DeterministicStub, RankerClient, ReplayClient};
pub use parse::{parse_ranking_output, render_ranking, RankLine, RankingUnavailable, MAX_NAME_DISTANCE, NOT_RANKED, name_distance_limit};
pub use prompt::{
    build_ranking_prompt, build_summary_prompt, render_finding, Prompt, PromptFinding, PromptKind,
    NO_PROBLEM_STATEMENT, TRUNCATION_MARKER,
};
pub use summary::{fallback_summary, parse_summary, SummaryDoc, HEADINGS, NO_FINDINGS};

use crate::actions::RuntimeConfig;
use crate::executor::{ActionRequest, Finding};
use crate::model::TsgType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub display: f64,
    pub propose: f64,
    pub execute: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            display: 0.10,
            propose: 0.30,
            execute: 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProductProfile {
    pub description: String,
    pub thresholds: Thresholds,
    /// Bytes allowed per serialized finding in the ranking prompt.
    pub explanation_budget: usize,
}

impl Default for ProductProfile {
    fn default() -> Self {
        ProductProfile {
            description: "A managed cloud database service.".into(),
            thresholds: Thresholds::default(),
            explanation_budget: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionGate {
    Execute,
    Propose,
    Skip,
}

impl ActionGate {
    pub fn for_probability(p: f64, t: &Thresholds) -> ActionGate {
        if p >= t.execute {
            ActionGate::Execute
        } else if p >= t.propose {
            ActionGate::Propose
        } else {
            ActionGate::Skip
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingSource {
    Model,
    /// The completion was unusable; findings are ordered by type.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFinding {
    /// Position in the findings slice the ranking was computed from.
    pub index: usize,
    pub tsg_id: String,
    pub title: String,
    pub tsg_type: TsgType,
    pub probability: f64,
    pub explanation: String,
    pub ranked: bool,
    pub display: bool,
    pub gate: ActionGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub source: RankingSource,
    /// Display order.
    pub findings: Vec<RankedFinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppressed {
    pub request: ActionRequest,
    /// Document whose higher-confidence action won the conflict.
    pub by: String,
}

/// What happens to each requested action once confidence is known.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub execute: Vec<ActionRequest>,
    pub propose: Vec<ActionRequest>,
    pub skip: Vec<ActionRequest>,
    pub suppressed: Vec<Suppressed>,
}

/// Probability descending, then type precedence, then document id.
pub fn display_order(a: &RankedFinding, b: &RankedFinding) -> Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then(b.tsg_type.precedence().cmp(&a.tsg_type.precedence()))
        .then(a.tsg_id.cmp(&b.tsg_id))
}

pub fn fallback_probability(t: TsgType) -> f64 {
    match t {
        TsgType::Critical => 0.6,
        TsgType::Warning => 0.4,
        TsgType::Informational => 0.2,
    }
}

/// Ranks the activated findings; `findings` indices are kept in the result.
pub fn rank(
    profile: &ProductProfile,
    problem_statement: &str,
    findings: &[Finding],
    client: &dyn RankerClient,
) -> Ranking {
    let active: Vec<(usize, &Finding)> = findings.iter().enumerate().filter(|(_, f)| f.activated).collect();
    let entries: Vec<PromptFinding> = active.iter().map(|(_, f)| PromptFinding::from_finding(f)).collect();
    if active.is_empty() {
        return Ranking {
            source: RankingSource::Model,
            findings: vec![],
            prompt_hash: None,
            error: None,
        };
    }
    let prompt = build_ranking_prompt(
        &profile.description,
        problem_statement,
        &entries,
        Some(profile.explanation_budget),
    );
    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    let parsed = client
        .complete(&prompt)
        .map_err(|e| e.to_string())
        .and_then(|c| parse_ranking_output(&c, &names).map_err(|e| e.to_string()));
    let (source, lines, error) = match parsed {
        Ok(lines) => (RankingSource::Model, lines, None),
        Err(e) => {
            let lines = active
                .iter()
                .enumerate()
                .map(|(i, (_, f))| RankLine {
                    index: i,
                    name: f.tsg_id.clone(),
                    probability: fallback_probability(f.tsg_type),
                    explanation: format!("ranking unavailable; ordered by type ({})", f.tsg_type),
                    ranked: false,
                })
                .collect();
            (RankingSource::Fallback, lines, Some(e))
        }
    };
    let t = &profile.thresholds;
    let mut ranked: Vec<RankedFinding> = lines
        .into_iter()
        .map(|l| {
            let (index, f) = active[l.index];
            RankedFinding {
                index,
                tsg_id: f.tsg_id.clone(),
                title: f.title.clone(),
                tsg_type: f.tsg_type,
                probability: l.probability,
                explanation: l.explanation,
                ranked: l.ranked,
                display: l.probability >= t.display,
                gate: ActionGate::for_probability(l.probability, t),
            }
        })
        .collect();
    ranked.sort_by(display_order);
    Ranking {
        source,
        findings: ranked,
        prompt_hash: Some(prompt_hash(&prompt.text)),
        error,
    }
}

/// Splits requested actions by their finding's gate. Actions that do not
/// touch production always run; impactful ones follow the gate, and a
/// conflicting action of a lower-ranked finding is suppressed.
pub fn gate(ranking: &Ranking, findings: &[Finding], runtime: &RuntimeConfig) -> ActionPlan {
    let mut plan = ActionPlan::default();
    let mut kept: Vec<(&ActionRequest, &str)> = Vec::new();
    for r in &ranking.findings {
        for req in &findings[r.index].actions {
            if !req.impactful {
                plan.execute.push(req.clone());
                continue;
            }
            let scoping = req.scoping_key();
            let winner = kept.iter().find(|(k, _)| {
                k.scoping_key() == scoping && runtime.conflicts(k.kind.name(), req.kind.name())
            });
            if let Some((_, by)) = winner {
                plan.suppressed.push(Suppressed {
                    request: req.clone(),
                    by: by.to_string(),
                });
                continue;
            }
            match r.gate {
                ActionGate::Execute => plan.execute.push(req.clone()),
                ActionGate::Propose => plan.propose.push(req.clone()),
                ActionGate::Skip => {
                    plan.skip.push(req.clone());
                    continue;
                }
            }
            kept.push((req, &r.tsg_id));
        }
    }
    plan
}

/// One-line description of an action for summaries and renderers.
pub fn describe_action(req: &ActionRequest) -> String {
    let params: Vec<String> = req.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut s = req.kind.name().to_string();
    if !params.is_empty() {
        s.push_str(&format!(" ({})", params.join(", ")));
    }
    if !req.scoping.is_empty() {
        s.push_str(&format!(" on {}", req.scoping));
    }
    s.push_str(&format!(" [{}]", req.tsg_id));
    s
}

/// Asks the client for the four-part summary; falls back to the template
/// when the ranking fell back or the completion does not parse.
pub fn summarize(
    profile: &ProductProfile,
    problem_statement: &str,
    ranking: &Ranking,
    findings: &[Finding],
    executed: &[String],
    proposed: &[String],
    client: &dyn RankerClient,
) -> SummaryDoc {
    let shown: Vec<&RankedFinding> = ranking.findings.iter().filter(|r| r.display).collect();
    let rows: Vec<(String, f64, String)> = shown
        .iter()
        .map(|r| (r.tsg_id.clone(), r.probability, r.explanation.clone()))
        .collect();
    let fallback = || fallback_summary(problem_statement, &rows, executed, proposed);
    if shown.is_empty() || ranking.source == RankingSource::Fallback {
        return fallback();
    }
    let entries: Vec<PromptFinding> = shown.iter().map(|r| PromptFinding::from_finding(&findings[r.index])).collect();
    let pairs: Vec<(f64, String)> = shown.iter().map(|r| (r.probability, r.explanation.clone())).collect();
    let prompt = build_summary_prompt(&profile.description, problem_statement, &entries, &pairs, executed, proposed);
    match client.complete(&prompt) {
        Ok(text) => parse_summary(&text).unwrap_or_else(fallback),
        Err(_) => fallback(),
    }
}
