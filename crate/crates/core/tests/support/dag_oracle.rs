//! Random small decision graphs over random tables, checked against a naive
//! depth-first executor that never memoizes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use autotsg_core::executor::{run_tsg, ExecOptions, Finding, StepStatus};
use autotsg_core::model::{infer_required_keys, parse_document, AutoTsgDoc, StepRef};
use autotsg_core::predicate::evaluate_filter;
use autotsg_core::query::{run_query, Column, SourceRegistry, Table, TableStore};
use autotsg_core::value::parse_datetime;
use autotsg_core::{Audience, ExecutionContext, Value, ValueType};
use proptest::prelude::*;

use super::tape::Tape;

#[derive(Debug, Clone)]
pub struct DagCase {
    pub yaml: String,
    pub tables: Vec<Table>,
    pub base: ExecutionContext,
}

fn table(name: &str, tape: &mut Tape) -> Table {
    let columns = vec![
        Column::new("G", ValueType::Long),
        Column::new("X", ValueType::Long),
        Column::new("Y", ValueType::Long),
    ];
    let rows = (0..1 + tape.pick(4))
        .map(|_| (0..3).map(|_| Value::Long(tape.pick(3) as i64)).collect())
        .collect();
    Table {
        name: name.into(),
        columns,
        rows,
    }
}

pub fn gen_case(tape: &mut Tape) -> DagCase {
    let steps = 1 + tape.pick(7);
    let mut pool: Vec<String> = vec!["B".into(), "X".into()];
    let trigger_adds_y = tape.chance(40);
    if trigger_adds_y {
        pool.push("Y".into());
    }
    let mut yaml = String::from(
        "Metadata:\n  Title: Generated\n  Owner: gen\n  Type: Warning\nTriggers:\n- Name: start\n  Audiences: [InternalOnDemand]\n  Queries:\n  - Source: Kusto\n    Explanation: rows from {B}\n    QueryText: T | where G >= {B} | take 4\n    AddedContext:\n      X: long\n",
    );
    if trigger_adds_y {
        yaml.push_str("      Y: long\n");
    }
    let edges = |from: usize, tape: &mut Tape| -> Vec<String> {
        let mut next: Vec<String> = (from + 1..=steps)
            .filter(|_| tape.chance(35))
            .map(|j| format!("s{j}"))
            .collect();
        if from == 0 && next.is_empty() {
            next.push("s1".into());
        }
        next
    };
    let start_next = edges(0, tape);
    yaml.push_str(&format!("  NextSteps: [{}]\n", start_next.join(", ")));

    let (mut checks, mut expls, mut actions) = (String::new(), String::new(), String::new());
    for i in 1..=steps {
        let key = pool[tape.pick(pool.len())].clone();
        let next = edges(i, tape);
        let next_line = format!("  NextSteps: [{}]\n", next.join(", "));
        let filter = if tape.chance(40) {
            let k = pool[tape.pick(pool.len())].clone();
            let op = [">", "!=", "<=", "=="][tape.pick(4)];
            format!("  Filter: '{{{k}}} {op} {}'\n", tape.pick(3))
        } else {
            String::new()
        };
        match tape.pick(3) {
            0 => {
                let adds = tape.chance(70);
                checks.push_str(&format!(
                    "- Name: s{i}\n{filter}  Query:\n    Source: Kusto\n    Explanation: check {{{key}}}\n    QueryText: W | where G == {{{key}}} | extend C{i} = X + Y | take 4\n"
                ));
                if adds {
                    checks.push_str(&format!("    AddedContext:\n      C{i}: long\n"));
                    pool.push(format!("C{i}"));
                }
                checks.push_str(&next_line);
            }
            1 => expls.push_str(&format!(
                "- Name: s{i}\n{filter}  Explanation: e{i} {{{key}}}\n{next_line}"
            )),
            _ => actions.push_str(&format!(
                "- Name: s{i}\n{filter}  Action: IncreaseSeverity\n  NewSeverity: '{{{key}}}'\n{next_line}"
            )),
        }
    }
    for (head, body) in [("Checks", checks), ("Explanations", expls), ("Actions", actions)] {
        if !body.is_empty() {
            yaml.push_str(&format!("{head}:\n{body}"));
        }
    }
    let base: ExecutionContext = [("B".to_string(), Value::Long(tape.pick(3) as i64))]
        .into_iter()
        .collect();
    DagCase {
        yaml,
        tables: vec![table("T", tape), table("W", tape)],
        base,
    }
}

type FiredSet = BTreeSet<(String, String)>;
type ActionSet = BTreeSet<(String, String)>;

struct Naive<'a> {
    doc: &'a AutoTsgDoc,
    store: &'a TableStore,
    fired: FiredSet,
    actions: ActionSet,
}

impl Naive<'_> {
    fn visit(&mut self, name: &str, ctx: &ExecutionContext) {
        let step = self.doc.step(name).expect("generated names resolve");
        let required = infer_required_keys(step);
        if !ctx.missing(&required).is_empty() {
            return;
        }
        if let Some(f) = step.filter() {
            if !evaluate_filter(f, ctx).expect("generated filters are well typed") {
                return;
            }
        }
        let projected = ctx.project(&required).canonical();
        let mut produced = vec![ctx.clone()];
        match step {
            StepRef::Check(c) => {
                let text = autotsg_core::template::substitute(&c.query.query_text, ctx).unwrap();
                let t = run_query(&text, self.store).expect("generated queries run");
                if t.is_empty() {
                    return;
                }
                produced.clear();
                for row in &t.rows {
                    let mut next = ctx.clone();
                    for key in c.query.added_context.keys() {
                        let idx = t.columns.iter().position(|col| &col.name == key).unwrap();
                        next = next.with(key.clone(), row[idx].clone());
                    }
                    if !produced.contains(&next) {
                        produced.push(next);
                    }
                }
            }
            StepRef::Action(a) => {
                let v = autotsg_core::template::substitute(&a.params["NewSeverity"], ctx).unwrap();
                self.actions.insert((a.name.clone(), v));
            }
            _ => {}
        }
        self.fired.insert((name.to_string(), projected));
        for p in produced {
            for n in step.next_steps() {
                self.visit(n, &p);
            }
        }
    }
}

fn naive(doc: &AutoTsgDoc, store: &TableStore, base: &ExecutionContext) -> (FiredSet, ActionSet) {
    let mut n = Naive {
        doc,
        store,
        fired: FiredSet::new(),
        actions: ActionSet::new(),
    };
    let trig = &doc.triggers[0];
    let q = &trig.queries[0];
    let text = autotsg_core::template::substitute(&q.query_text, base).unwrap();
    let t = run_query(&text, store).unwrap();
    if t.is_empty() {
        return (n.fired, n.actions);
    }
    let required = infer_required_keys(StepRef::Trigger(trig));
    n.fired.insert((trig.name.clone(), base.project(&required).canonical()));
    let mut vars: Vec<ExecutionContext> = Vec::new();
    for row in &t.rows {
        let mut v = base.clone();
        for key in q.added_context.keys() {
            let idx = t.columns.iter().position(|c| &c.name == key).unwrap();
            v = v.with(key.clone(), row[idx].clone());
        }
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    for v in &vars {
        for s in &trig.next_steps {
            n.visit(s, v);
        }
    }
    (n.fired, n.actions)
}

fn memoized_sets(doc: &AutoTsgDoc, f: &Finding) -> (FiredSet, ActionSet) {
    let fired = f
        .fired()
        .map(|o| {
            let step = doc.step(&o.step).unwrap();
            (o.step.clone(), o.context.project(infer_required_keys(step)).canonical())
        })
        .collect();
    let actions = f
        .actions
        .iter()
        .map(|a| (a.step.clone(), a.params["NewSeverity"].clone()))
        .collect();
    (fired, actions)
}

pub fn check_case(case: &DagCase) -> Result<(), String> {
    let doc = parse_document(&case.yaml).map_err(|e| format!("{e}\n{}", case.yaml))?;
    let store = Arc::new(TableStore::new());
    for t in &case.tables {
        store.insert(t.clone());
    }
    let reg = SourceRegistry::local(store.clone(), &[]);
    let now = parse_datetime("2024-03-01T00:00:00Z").unwrap();
    let f = run_tsg(&doc, &reg, &case.base, &ExecOptions::new(Audience::InternalOnDemand, now));
    if f.errored {
        return Err(format!("memoized run errored\n{}", case.yaml));
    }

    // query calls per check equal its distinct executed memo keys
    let mut keys: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for o in &f.outcomes {
        let Some(k) = o.memo_key.as_deref() else { continue };
        if o.status == StepStatus::Deduplicated {
            continue;
        }
        if !seen.insert(k) {
            return Err(format!("memo key {k} recorded twice\n{}", case.yaml));
        }
        if matches!(o.status, StepStatus::Fired | StepStatus::NoData)
            && o.kind == autotsg_core::model::StepKind::Check
        {
            keys.entry(&o.step).or_default().insert(k);
        }
    }
    for c in &doc.checks {
        let calls = f.query_calls.get(&c.name).copied().unwrap_or(0);
        let distinct = keys.get(c.name.as_str()).map_or(0, BTreeSet::len);
        if calls != distinct {
            return Err(format!(
                "{}: {calls} query calls for {distinct} memo keys\n{}",
                c.name, case.yaml
            ));
        }
    }

    let (fired, actions) = memoized_sets(&doc, &f);
    let (nf, na) = naive(&doc, &store, &case.base);
    if fired != nf {
        return Err(format!(
            "fired sets differ\nmemoized {fired:?}\nnaive {nf:?}\n{}",
            case.yaml
        ));
    }
    if actions != na {
        return Err(format!("actions differ\nmemoized {actions:?}\nnaive {na:?}\n{}", case.yaml));
    }
    Ok(())
}

pub fn case_strategy() -> impl Strategy<Value = DagCase> {
    prop::collection::vec(any::<u32>(), 64..160).prop_map(|v| gen_case(&mut Tape::new(v)))
}
