use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionOutcome, ActionResult, DispatchReport, OpRecord, Ticket};
use crate::context::ExecutionContext;
use crate::executor::{ActionRequest, Finding, StepOutcome, StepStatus};
use crate::model::{Audience, StepKind, TsgType};
use crate::prioritizer::{ActionGate, ActionPlan, Ranking, RankingSource, SummaryDoc};
use crate::query::Table;

pub const UNGROUPED_TOPIC: &str = "Other";

/// What an audience gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayPolicy {
    pub query_text: bool,
    pub tables: bool,
    /// Non-fired outcomes and step errors.
    pub diagnostics: bool,
    pub actions: bool,
    pub suppressed_section: bool,
    pub group_by_topic: bool,
}

impl DisplayPolicy {
    pub fn for_audience(a: Audience) -> DisplayPolicy {
        let internal = DisplayPolicy {
            query_text: true,
            tables: true,
            diagnostics: true,
            actions: true,
            suppressed_section: true,
            group_by_topic: false,
        };
        match a {
            Audience::CustomerVisible => DisplayPolicy {
                query_text: false,
                tables: false,
                diagnostics: false,
                actions: false,
                suppressed_section: false,
                group_by_topic: false,
            },
            Audience::SupportTicket => DisplayPolicy {
                suppressed_section: false,
                ..internal
            },
            Audience::InternalOnDemand => DisplayPolicy {
                group_by_topic: true,
                ..internal
            },
            Audience::InternalTicket | Audience::Schedule => internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub step: String,
    pub kind: StepKind,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markdown: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingView {
    pub tsg_id: String,
    pub version: u64,
    pub title: String,
    pub tsg_type: TsgType,
    pub topics: Vec<String>,
    pub probability: f64,
    pub explanation: String,
    pub gate: ActionGate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub called_by: Option<String>,
    pub outcomes: Vec<OutcomeView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicGroup {
    pub topic: String,
    pub findings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenFinding {
    pub tsg_id: String,
    pub title: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionView {
    pub tsg_id: String,
    pub step: String,
    pub kind: String,
    pub scoping: String,
    pub params: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suppressed_by: Option<String>,
}

impl ActionView {
    fn of(r: &ActionRequest) -> ActionView {
        ActionView {
            tsg_id: r.tsg_id.clone(),
            step: r.step.clone(),
            kind: r.kind.name().to_string(),
            scoping: r.scoping_key(),
            params: r.params.clone(),
            suppressed_by: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionsView {
    /// Every dispatched action with its result, in dispatch order.
    pub executed: Vec<ActionOutcome>,
    /// Production operations carried out while serving the request.
    pub operations: Vec<OpRecord>,
    pub proposed: Vec<ActionView>,
    pub skipped: Vec<ActionView>,
    pub suppressed: Vec<ActionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticResponse {
    pub session_id: String,
    pub audience: Audience,
    pub base_context: ExecutionContext,
    pub problem_statement: String,
    pub ranking_source: RankingSource,
    pub summary: SummaryDoc,
    /// Displayed findings in ranking order.
    pub findings: Vec<FindingView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topic_groups: Vec<TopicGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed: Vec<HiddenFinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<ActionsView>,
    /// Findings of documents run by CallAutoTsg actions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub called: Vec<FindingView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<Ticket>,
}

/// Everything a session produced, before the audience policy applies.
pub struct SessionResult<'a> {
    pub session_id: String,
    pub audience: Audience,
    pub base_context: &'a ExecutionContext,
    pub problem_statement: &'a str,
    pub findings: &'a [Finding],
    pub ranking: &'a Ranking,
    pub plan: &'a ActionPlan,
    pub dispatch: &'a DispatchReport,
    pub operations: &'a [OpRecord],
    pub summary: &'a SummaryDoc,
    pub ticket: Option<&'a Ticket>,
}

fn outcome_view(o: &StepOutcome, p: &DisplayPolicy) -> Option<OutcomeView> {
    if !p.diagnostics && (o.status != StepStatus::Fired || o.markdown.is_none()) {
        return None;
    }
    Some(OutcomeView {
        step: o.step.clone(),
        kind: o.kind,
        status: o.status,
        markdown: o.markdown.clone(),
        queries: if p.query_text { o.queries.iter().map(|q| q.text.clone()).collect() } else { vec![] },
        tables: if p.tables { o.queries.iter().map(|q| q.table.clone()).collect() } else { vec![] },
        error: if p.diagnostics { o.error.clone() } else { None },
    })
}

fn finding_view(
    f: &Finding,
    probability: f64,
    explanation: &str,
    gate: ActionGate,
    p: &DisplayPolicy,
) -> FindingView {
    FindingView {
        tsg_id: f.tsg_id.clone(),
        version: f.version,
        title: f.title.clone(),
        tsg_type: f.tsg_type,
        topics: f.topics.clone(),
        probability,
        explanation: explanation.to_string(),
        gate,
        called_by: f.called_by.clone(),
        outcomes: f.outcomes.iter().filter_map(|o| outcome_view(o, p)).collect(),
    }
}

pub fn render_response(s: &SessionResult<'_>) -> DiagnosticResponse {
    let p = DisplayPolicy::for_audience(s.audience);
    let mut findings = Vec::new();
    let mut suppressed = Vec::new();
    for r in &s.ranking.findings {
        if r.display {
            findings.push(finding_view(&s.findings[r.index], r.probability, &r.explanation, r.gate, &p));
        } else if p.suppressed_section {
            suppressed.push(HiddenFinding {
                tsg_id: r.tsg_id.clone(),
                title: r.title.clone(),
                probability: r.probability,
            });
        }
    }

    let mut topic_groups: Vec<TopicGroup> = Vec::new();
    if p.group_by_topic {
        for f in &findings {
            let topics = if f.topics.is_empty() { vec![UNGROUPED_TOPIC.to_string()] } else { f.topics.clone() };
            for t in topics {
                match topic_groups.iter_mut().find(|g| g.topic == t) {
                    Some(g) => g.findings.push(f.tsg_id.clone()),
                    None => topic_groups.push(TopicGroup {
                        topic: t,
                        findings: vec![f.tsg_id.clone()],
                    }),
                }
            }
        }
    }

    let actions = p.actions.then(|| ActionsView {
        executed: s.dispatch.outcomes.clone(),
        operations: s.operations.to_vec(),
        proposed: s.plan.propose.iter().map(ActionView::of).collect(),
        skipped: s.plan.skip.iter().map(ActionView::of).collect(),
        suppressed: s
            .plan
            .suppressed
            .iter()
            .map(|x| ActionView {
                suppressed_by: Some(x.by.clone()),
                ..ActionView::of(&x.request)
            })
            .collect(),
    });

    let called = if p.actions {
        s.dispatch
            .called
            .iter()
            .filter(|f| f.activated)
            .map(|f| finding_view(f, 0.0, "run by a calling document", ActionGate::Skip, &p))
            .collect()
    } else {
        vec![]
    };

    DiagnosticResponse {
        session_id: s.session_id.clone(),
        audience: s.audience,
        base_context: s.base_context.clone(),
        problem_statement: s.problem_statement.to_string(),
        ranking_source: s.ranking.source,
        summary: s.summary.clone(),
        findings,
        topic_groups,
        suppressed,
        actions,
        called,
        ticket: if p.actions { s.ticket.cloned() } else { None },
    }
}

fn table_markdown(t: &Table, out: &mut String) {
    let head: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(out, "| {} |", head.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(head.len()));
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|v| v.render().replace('|', "\\|")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
}

fn result_text(o: &ActionOutcome) -> String {
    match &o.result {
        ActionResult::TicketUpdated { note } => note.clone(),
        ActionResult::Incident { outcome } => serde_json::to_string(outcome).unwrap_or_default(),
        ActionResult::Queued { outcome } => serde_json::to_string(outcome).unwrap_or_default(),
        ActionResult::Called { target, activated } => {
            format!("called {target} ({})", if *activated { "activated" } else { "no findings" })
        }
        ActionResult::Rejected { reason, detail } => format!("rejected ({reason:?}): {detail}"),
    }
}

fn finding_markdown(f: &FindingView, out: &mut String) {
    let _ = writeln!(
        out,
        "## {} ({}, {:.0}%)\n\n_{}_ [{}]\n",
        f.title,
        f.tsg_type,
        f.probability * 100.0,
        f.explanation,
        f.tsg_id
    );
    for o in &f.outcomes {
        if o.status != StepStatus::Fired {
            let _ = writeln!(out, "- `{}`: {:?}{}\n", o.step, o.status, o.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default());
            continue;
        }
        if let Some(md) = &o.markdown {
            let _ = writeln!(out, "{}\n", md.trim_end());
        }
        for t in &o.tables {
            if !t.columns.is_empty() {
                table_markdown(t, out);
                out.push('\n');
            }
        }
        for q in &o.queries {
            let _ = writeln!(out, "<details><summary>query</summary>\n\n```\n{}\n```\n</details>\n", q.trim_end());
        }
    }
}

/// Human-readable rendering of a response.
pub fn render_markdown(r: &DiagnosticResponse) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Diagnostics ({})\n", r.audience);
    out.push_str(&r.summary.to_markdown());
    out.push('\n');
    if r.findings.is_empty() {
        out.push_str("No findings.\n");
    }
    if r.topic_groups.is_empty() {
        for f in &r.findings {
            finding_markdown(f, &mut out);
        }
    } else {
        for g in &r.topic_groups {
            let _ = writeln!(out, "# Topic: {}\n", g.topic);
            for id in &g.findings {
                if let Some(f) = r.findings.iter().find(|f| &f.tsg_id == id) {
                    finding_markdown(f, &mut out);
                }
            }
        }
    }
    for f in &r.called {
        finding_markdown(f, &mut out);
    }
    if let Some(a) = &r.actions {
        if !a.executed.is_empty() || !a.proposed.is_empty() || !a.suppressed.is_empty() {
            out.push_str("## Actions\n\n");
        }
        for o in &a.executed {
            let _ = writeln!(out, "- {} `{}/{}`: {}", o.kind, o.tsg_id, o.step, result_text(o));
        }
        for op in &a.operations {
            let _ = writeln!(out, "- operation {} {:?} on {}: {}", op.kind, op.status, op.scoping, op.detail);
        }
        for v in &a.proposed {
            let _ = writeln!(out, "- proposed: {} `{}/{}` on {}", v.kind, v.tsg_id, v.step, v.scoping);
        }
        for v in &a.suppressed {
            let _ = writeln!(
                out,
                "- suppressed: {} `{}/{}` (conflicts with {})",
                v.kind,
                v.tsg_id,
                v.step,
                v.suppressed_by.as_deref().unwrap_or("?")
            );
        }
        if !a.executed.is_empty() || !a.proposed.is_empty() || !a.suppressed.is_empty() {
            out.push('\n');
        }
    }
    if !r.suppressed.is_empty() {
        out.push_str("<details><summary>hidden findings</summary>\n\n");
        for h in &r.suppressed {
            let _ = writeln!(out, "- {} ({:.0}%)", h.tsg_id, h.probability * 100.0);
        }
        out.push_str("</details>\n");
    }
    out
}
