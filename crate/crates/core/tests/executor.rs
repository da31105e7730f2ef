mod common;

use std::sync::Arc;

use autotsg_core::executor::{run_all, run_all_sequential, run_tsg, ExecOptions, StepStatus};
use autotsg_core::model::{parse_document, ActionKind, Audience, StepKind};
use autotsg_core::query::{Column, TableStore};
use autotsg_core::value::parse_datetime;
use autotsg_core::{Timespan, Value, ValueType};
use common::*;

fn opts(audience: Audience) -> ExecOptions {
    ExecOptions::new(audience, t(12, 0))
}

fn snippet1() -> autotsg_core::AutoTsgDoc {
    doc("tsgs/recent-upgrades.yaml", "recent-upgrades")
}

fn mgmt_columns() -> Vec<Column> {
    vec![
        Column::new("TimeStamp", ValueType::DateTime),
        Column::new("OperationName", ValueType::String),
        Column::new("OperationId", ValueType::Long),
        Column::new("ServerName", ValueType::String),
        Column::new("DatabaseName", ValueType::String),
        Column::new("State", ValueType::String),
    ]
}

fn op_row(ts: &str, id: i64, state: &str) -> Vec<Value> {
    vec![
        Value::DateTime(parse_datetime(ts).unwrap()),
        "Upgrade".into(),
        Value::Long(id),
        "s1".into(),
        "db1".into(),
        state.into(),
    ]
}

#[test]
fn recent_upgrades_over_a1() {
    let reg = registry(a1_store());
    let f = run_tsg(&snippet1(), &reg, &a1_context(), &opts(Audience::InternalTicket));
    assert!(f.activated && !f.errored);
    let seen: Vec<(&str, StepStatus)> = f.outcomes.iter().map(|o| (o.step.as_str(), o.status)).collect();
    assert_eq!(
        seen,
        [
            ("trigger-1", StepStatus::Fired),
            ("check-version-change", StepStatus::Fired),
            ("print-warning-if-long-duration-and-running", StepStatus::Fired),
            ("raise-severity", StepStatus::Fired),
        ]
    );

    let trig = &f.outcomes[0];
    let table = trig.table().unwrap();
    assert_eq!(table.len(), 1);
    assert_eq!(trig.variations.len(), 1);
    let v = &trig.variations[0];
    assert_eq!(v.get("OperationId"), Some(&Value::Long(1001)));
    assert_eq!(v.get("Duration"), Some(&Value::Timespan(Timespan::from_minutes(90))));
    assert_eq!(v.get("State"), Some(&Value::from("Running")));
    assert_eq!(
        f.headline.as_deref(),
        Some("We detected an upgrade for database:\n- Server: **s1**.\n- DB: **db1**\nHere are details of the recent upgrade(s):")
    );
    assert!(trig.queries[0].text.contains("where ServerName == \"s1\""));
    assert!(trig.queries[0].text.contains("datetime(2024-03-01T00:00:00.000000Z)"));

    let check = f.outcomes[1].table().unwrap();
    let names: Vec<&str> = check.columns.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["count_", "list_Version"]);
    assert_eq!(check.rows, vec![vec![Value::Long(2), Value::from("[v1, v2]")]]);
    assert_eq!(f.outcomes[1].markdown.as_deref(), Some("The instance changed versions:"));

    assert!(f.outcomes[2].markdown.as_ref().unwrap().starts_with("There has been a recent upgrade that:"));

    assert_eq!(f.actions.len(), 1);
    let a = &f.actions[0];
    assert_eq!(a.kind, ActionKind::IncreaseSeverity);
    assert_eq!(a.param("NewSeverity"), Some("A"));
    assert!(!a.impactful);
    assert_eq!(a.scoping.keys().collect::<Vec<_>>(), ["DatabaseName", "ServerName"]);
}

#[test]
fn audience_outside_trigger_list() {
    let reg = registry(a1_store());
    let f = run_tsg(&snippet1(), &reg, &a1_context(), &opts(Audience::CustomerVisible));
    assert!(!f.activated);
    assert!(f.outcomes.is_empty());
}

#[test]
fn scheduled_document_ignores_ticket_audience() {
    let reg = registry(a1_store());
    let d = doc("scheduled/long-upgrade-monitor.yaml", "monitor");
    let f = run_tsg(&d, &reg, &a1_context(), &opts(Audience::InternalTicket));
    assert!(!f.activated);
    assert!(f.outcomes.is_empty());
}

#[test]
fn missing_base_key_skips() {
    let reg = registry(a1_store());
    let base: autotsg_core::ExecutionContext = a1_context()
        .iter()
        .filter(|(k, _)| *k != "EndTime")
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    let f = run_tsg(&snippet1(), &reg, &base, &opts(Audience::InternalTicket));
    assert!(!f.activated);
    assert_eq!(f.outcomes.len(), 1);
    assert_eq!(f.outcomes[0].status, StepStatus::SkippedMissingKeys);
    assert_eq!(f.outcomes[0].missing_keys, ["EndTime"]);
    assert!(f.query_calls.is_empty());
}

#[test]
fn empty_tables_do_not_activate() {
    let store = Arc::new(TableStore::new());
    store.append_rows("ManagementOperations", &mgmt_columns(), vec![]).unwrap();
    let f = run_tsg(&snippet1(), &registry(store), &a1_context(), &opts(Audience::InternalTicket));
    assert!(!f.activated);
    assert_eq!(f.outcomes.len(), 1);
    assert_eq!(f.outcomes[0].status, StepStatus::NoData);
    assert!(f.actions.is_empty());
}

#[test]
fn two_upgrades_share_one_version_check() {
    let store = a1_store();
    store
        .append_rows(
            "ManagementOperations",
            &mgmt_columns(),
            vec![
                op_row("2024-03-01T11:00:00Z", 1003, "Running"),
                op_row("2024-03-01T11:10:00Z", 1003, "Complete"),
            ],
        )
        .unwrap();
    let f = run_tsg(&snippet1(), &registry(store), &a1_context(), &opts(Audience::InternalTicket));
    assert_eq!(f.outcomes[0].variations.len(), 2);
    let check: Vec<StepStatus> = f
        .outcomes
        .iter()
        .filter(|o| o.step == "check-version-change")
        .map(|o| o.status)
        .collect();
    assert_eq!(check, [StepStatus::Fired, StepStatus::Deduplicated]);
    assert_eq!(f.query_calls["check-version-change"], 1);
    // 1003 lasted 10 minutes and completed
    let expl: Vec<StepStatus> = f
        .outcomes
        .iter()
        .filter(|o| o.kind == StepKind::Explanation)
        .map(|o| o.status)
        .collect();
    assert_eq!(expl, [StepStatus::Fired, StepStatus::FilteredOut]);
    assert_eq!(f.actions.len(), 1);
}

#[test]
fn short_upgrade_prunes_the_action() {
    let store = Arc::new(TableStore::new());
    store
        .append_rows(
            "ManagementOperations",
            &mgmt_columns(),
            vec![
                op_row("2024-03-01T08:00:00Z", 7, "Running"),
                op_row("2024-03-01T08:30:00Z", 7, "Running"),
            ],
        )
        .unwrap();
    let f = run_tsg(&snippet1(), &registry(store), &a1_context(), &opts(Audience::InternalOnDemand));
    assert!(f.activated);
    // no RawDatabaseLogs table: the check errors, its branch alone is lost
    let by_step = |s: &str| f.outcomes.iter().find(|o| o.step == s).map(|o| o.status);
    assert_eq!(by_step("check-version-change"), Some(StepStatus::Errored));
    assert_eq!(
        by_step("print-warning-if-long-duration-and-running"),
        Some(StepStatus::FilteredOut)
    );
    assert_eq!(by_step("raise-severity"), None);
    assert!(f.errored);
    assert!(f.actions.is_empty());
}

const UNRELATED: &str = r#"
Metadata:
  Title: Login Failures
  Owner: identity
  Type: Informational
  Topics: [login]
Triggers:
- Audiences: [InternalTicket, InternalOnDemand]
  Queries:
  - Source: Kusto
    QueryText: |
      ManagementOperations
      | where OperationName == "Login"
      | where ServerName == "{ServerName}"
"#;

#[test]
fn run_all_keeps_order_and_isolation() {
    let reg = registry(a1_store());
    let mut disabled = snippet1();
    disabled.id = "disabled".into();
    disabled.enabled = false;
    let docs = vec![snippet1(), parse_document(UNRELATED).unwrap(), disabled];
    let o = opts(Audience::InternalTicket);
    let found = run_all(&docs, &reg, &a1_context(), &o);
    let ids: Vec<(&str, bool)> = found.iter().map(|f| (f.tsg_id.as_str(), f.activated)).collect();
    assert_eq!(ids, [("recent-upgrades", true), ("login-failures", false)]);
    assert_eq!(found, run_all_sequential(&docs, &reg, &a1_context(), &o));
    assert!(run_all::<autotsg_core::AutoTsgDoc>(&[], &reg, &a1_context(), &o).is_empty());
}

#[test]
fn repeated_runs_serialize_identically() {
    let reg = registry(a1_store());
    let docs: Vec<_> = (0..5)
        .map(|i| {
            let mut d = snippet1();
            d.id = format!("copy-{i}");
            d
        })
        .collect();
    let o = opts(Audience::InternalTicket);
    let a = serde_json::to_string(&run_all(&docs, &reg, &a1_context(), &o)).unwrap();
    let b = serde_json::to_string(&run_all(&docs, &reg, &a1_context(), &o)).unwrap();
    assert_eq!(a, b);
    let back: Vec<autotsg_core::Finding> = serde_json::from_str(&a).unwrap();
    assert_eq!(back.len(), 5);
    assert!(back.iter().all(|f| f.fired().count() == 4));
}

#[test]
fn oversized_context_errors() {
    let reg = registry(a1_store());
    let mut o = opts(Audience::InternalTicket);
    o.max_context_keys = 5;
    let f = run_tsg(&snippet1(), &reg, &a1_context(), &o);
    assert_eq!(f.outcomes.len(), 1);
    assert_eq!(f.outcomes[0].status, StepStatus::Errored);
    assert!(f.outcomes[0].error.as_ref().unwrap().contains("limit of 5"));
}
