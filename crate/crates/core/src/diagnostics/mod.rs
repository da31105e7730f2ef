//! The diagnostics service: base-context extraction, the document registry,
//! execution sessions, feedback, and per-audience rendering.

mod engine;
mod extract;
mod feedback;
mod registry;
mod render;

pub use engine::{
    check_document, Engine, EngineConfig, ExecuteError, ExecuteRequest, FeedbackError, FeedbackResult,
};
pub use extract::{
    extract_base_context, extract_with_rules, BaseContextRule, Enrichment, ExtractError, ExtractedContext,
    Extraction, FieldMapping, IncidentPayload,
};
pub use feedback::{approval, Approval, FeedbackPolicy, FeedbackRecord, FeedbackStore, Verdict, WorkItem};
pub use registry::{summary, TsgRegistry, TsgSummary};
pub use render::{
    render_markdown, render_response, ActionView, ActionsView, DiagnosticResponse, DisplayPolicy, FindingView,
    HiddenFinding, OutcomeView, SessionResult, TopicGroup, UNGROUPED_TOPIC,
};

/// JSON schema every `DiagnosticResponse` validates against.
pub const RESPONSE_SCHEMA: &str = include_str!("../../schema/diagnostic_response.schema.json");
