use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{ActionKind, Audience, AutoTsgDoc, StepRef};
use crate::predicate::check_filter;
use crate::template;

/// Base-context keys available per audience.
pub type BaseKeys = BTreeMap<Audience, BTreeSet<String>>;

/// Interactive audiences carry the resource and its impact window; the
/// scheduled audience only the tick window.
pub fn default_base_keys() -> BaseKeys {
    let interactive: BTreeSet<String> = ["ServerName", "DatabaseName", "StartTime", "EndTime"]
        .into_iter()
        .map(String::from)
        .collect();
    let mut out = BaseKeys::new();
    for a in Audience::ALL {
        if a == Audience::Schedule {
            out.insert(a, ["StartTime", "TimeStamp"].into_iter().map(String::from).collect());
        } else {
            out.insert(a, interactive.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: String,
    pub scope: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, code: &str, scope: &str, message: String) {
        self.errors.push(Issue {
            code: code.into(),
            scope: scope.into(),
            message,
        });
    }

    fn warn(&mut self, code: &str, scope: &str, message: String) {
        self.warnings.push(Issue {
            code: code.into(),
            scope: scope.into(),
            message,
        });
    }

    /// Human-readable listing, one issue per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (label, list) in [("error", &self.errors), ("warning", &self.warnings)] {
            for i in list {
                out.push_str(&format!("{label}[{}] {}: {}\n", i.code, i.scope, i.message));
            }
        }
        out
    }
}

/// Kahn's algorithm over the NextSteps edges. `None` when there is a cycle.
/// Unresolved names are ignored here.
pub fn topological_order(doc: &AutoTsgDoc) -> Option<Vec<String>> {
    let names: Vec<&str> = doc.steps().map(|s| s.name()).collect();
    let mut indegree: BTreeMap<&str, usize> = names.iter().map(|n| (*n, 0)).collect();
    for s in doc.steps() {
        for n in s.next_steps() {
            if let Some(d) = indegree.get_mut(n.as_str()) {
                *d += 1;
            }
        }
    }
    let mut queue: VecDeque<&str> = names
        .iter()
        .copied()
        .filter(|n| indegree[n] == 0)
        .collect();
    let mut order = Vec::new();
    while let Some(n) = queue.pop_front() {
        order.push(n.to_string());
        let step = doc.step(n).expect("declared");
        for m in step.next_steps() {
            if let Some(d) = indegree.get_mut(m.as_str()) {
                *d -= 1;
                if *d == 0 {
                    queue.push_back(m.as_str());
                }
            }
        }
    }
    (order.len() == names.len()).then_some(order)
}

fn find_cycle(doc: &AutoTsgDoc) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit<'a>(
        doc: &'a AutoTsgDoc,
        n: &'a str,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(n, Mark::Active);
        path.push(n);
        for m in doc.step(n).map(|s| s.next_steps()).unwrap_or_default() {
            match marks.get(m.as_str()).copied() {
                Some(Mark::Active) => {
                    let start = path.iter().position(|p| *p == m).expect("on path");
                    let mut cycle: Vec<String> =
                        path[start..].iter().map(|s| s.to_string()).collect();
                    cycle.push(m.clone());
                    return Some(cycle);
                }
                Some(Mark::New) => {
                    if let Some(c) = visit(doc, m, marks, path) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        path.pop();
        marks.insert(n, Mark::Done);
        None
    }
    let mut marks: BTreeMap<&str, Mark> = doc.steps().map(|s| (s.name(), Mark::New)).collect();
    let names: Vec<&str> = doc.steps().map(|s| s.name()).collect();
    for n in names {
        if marks[n] == Mark::New {
            if let Some(c) = visit(doc, n, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

fn reachable_from<'a>(doc: &'a AutoTsgDoc, roots: &[&'a str]) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = roots.to_vec();
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            continue;
        }
        if let Some(s) = doc.step(n) {
            stack.extend(s.next_steps().iter().map(String::as_str));
        }
    }
    seen
}

/// Static checks over a parsed document. Pure.
pub fn validate_document(doc: &AutoTsgDoc, base_keys: &BaseKeys) -> ValidationReport {
    let mut r = ValidationReport::default();

    for s in doc.steps() {
        for n in s.next_steps() {
            match doc.step(n) {
                None => r.error(
                    "unresolved-step",
                    s.name(),
                    format!("next step '{n}' is not defined in this document"),
                ),
                Some(StepRef::Trigger(_)) => r.error(
                    "unresolved-step",
                    s.name(),
                    format!("next step '{n}' is a trigger; triggers are entry points only"),
                ),
                Some(_) => {}
            }
        }
        if let Some(f) = s.filter() {
            if let Err(e) = check_filter(f) {
                r.error("filter-syntax", s.name(), e.to_string());
            }
        }
    }

    if let Some(cycle) = find_cycle(doc) {
        r.error("cycle", &cycle[0], format!("cycle: {}", cycle.join(" → ")));
    }

    let roots: Vec<&str> = doc.triggers.iter().map(|t| t.name.as_str()).collect();
    let reachable = reachable_from(doc, &roots);
    for s in doc.steps() {
        if !reachable.contains(s.name()) {
            r.warn(
                "unreachable",
                s.name(),
                "step is not reachable from any trigger".into(),
            );
        }
    }

    let schedule_keys = base_keys.get(&Audience::Schedule).cloned().unwrap_or_default();
    for t in &doc.triggers {
        if t.is_scheduled() {
            if t.audiences.iter().any(|a| *a != Audience::Schedule) {
                r.error(
                    "schedule-audience-mix",
                    &t.name,
                    "a Schedule trigger cannot list other audiences".into(),
                );
            }
            let Some(freq) = t.frequency else {
                r.error(
                    "schedule-missing",
                    &t.name,
                    "a Schedule trigger requires ScheduleSettings.Frequency".into(),
                );
                continue;
            };
            let mut known = schedule_keys.clone();
            for (i, q) in t.queries.iter().enumerate() {
                for k in template::placeholders(&q.query_text) {
                    if !known.contains(&k) {
                        r.error(
                            "schedule-placeholder",
                            &t.name,
                            format!(
                                "query {} references {{{k}}}, which the scheduled base context does not provide",
                                i + 1
                            ),
                        );
                    }
                }
                known.extend(q.added_context.keys().cloned());
            }
            let below: Vec<&str> = reachable_from(doc, &[t.name.as_str()]).into_iter().collect();
            for a in &doc.actions {
                if a.kind != ActionKind::CreateIncident || !below.contains(&a.name.as_str()) {
                    continue;
                }
                if let Some(ttl) = a.ttl {
                    let min = freq.checked_mul(3);
                    if min.is_none_or(|m| ttl < m) {
                        r.error(
                            "ttl-frequency",
                            &a.name,
                            format!(
                                "TTL must be ≥ 3 × frequency (TTL {ttl}, frequency {freq} from {})",
                                t.name
                            ),
                        );
                    }
                }
            }
        } else {
            if t.frequency.is_some() {
                r.error(
                    "schedule-audience-mix",
                    &t.name,
                    "ScheduleSettings is only valid on a Schedule trigger".into(),
                );
            }
            let needed = t.base_keys();
            for a in &t.audiences {
                let have = base_keys.get(a).cloned().unwrap_or_default();
                let absent: Vec<&str> = needed
                    .iter()
                    .filter(|k| !have.contains(*k))
                    .map(String::as_str)
                    .collect();
                if !absent.is_empty() {
                    r.warn(
                        "missing-base-key",
                        &t.name,
                        format!(
                            "the {a} base context lacks {}; the trigger will always be skipped for it",
                            absent.join(", ")
                        ),
                    );
                }
            }
        }
    }

    for a in &doc.actions {
        if a.kind == ActionKind::CreateIncident && a.ttl.is_none() {
            r.error(
                "ttl-missing",
                &a.name,
                "CreateIncident requires ThrottlingSettings.TimeToLive".into(),
            );
        }
    }

    r
}
