//! Random well-typed (table, pipeline) pairs and a brute-force reference
//! evaluator that shares nothing with the engine beyond the value types.

use std::cmp::Ordering;

use autotsg_core::query::{run_query, Column, Table, TableStore};
use autotsg_core::value::{parse_datetime, render_datetime};
use autotsg_core::{Timespan, Value, ValueType};
use proptest::prelude::*;

use super::tape::Tape;

#[derive(Debug, Clone)]
enum G {
    Col(String),
    Lit(Value),
    Add(Box<G>, Box<G>),
    Sub(Box<G>, Box<G>),
    Cmp(&'static str, Box<G>, Box<G>),
    And(Box<G>, Box<G>),
    Or(Box<G>, Box<G>),
}

#[derive(Debug, Clone)]
enum Agg {
    Count,
    Min(String),
    Max(String),
    ArgMax(String, String),
    List(String),
}

#[derive(Debug, Clone)]
enum GStage {
    Where(G),
    Extend(String, G),
    Summarize(Vec<(String, bool, Agg)>, Vec<String>),
    Project(Vec<String>),
    Take(usize),
}

#[derive(Debug, Clone)]
pub struct QueryCase {
    pub table: Table,
    pub text: String,
    stages: Vec<GStage>,
}

type Schema = Vec<(String, ValueType)>;

fn base_time() -> chrono::DateTime<chrono::Utc> {
    parse_datetime("2024-03-01T00:00:00Z").unwrap()
}

fn lit(ty: ValueType, tape: &mut Tape) -> Value {
    match ty {
        ValueType::Long => Value::Long(tape.pick(9) as i64 - 3),
        ValueType::String => Value::from(["a", "b", "c", "zz"][tape.pick(4)]),
        ValueType::DateTime => {
            Value::DateTime(base_time() + chrono::Duration::minutes(30 * tape.pick(7) as i64))
        }
        ValueType::Timespan => Value::Timespan(Timespan::from_minutes(30 * tape.pick(7) as i64)),
        _ => unreachable!("not generated"),
    }
}

fn cols_of(schema: &Schema, ty: ValueType) -> Vec<&String> {
    schema.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n).collect()
}

fn scalar(ty: ValueType, schema: &Schema, tape: &mut Tape, depth: usize) -> G {
    let cols = cols_of(schema, ty);
    let choice = tape.pick(if depth < 2 { 4 } else { 2 });
    if choice == 0 && !cols.is_empty() {
        return G::Col(cols[tape.pick(cols.len())].clone());
    }
    if choice >= 2 {
        let d = depth + 1;
        match ty {
            ValueType::Long => {
                let (l, r) = (scalar(ty, schema, tape, d), scalar(ty, schema, tape, d));
                return if tape.chance(50) {
                    G::Add(Box::new(l), Box::new(r))
                } else {
                    G::Sub(Box::new(l), Box::new(r))
                };
            }
            ValueType::Timespan => {
                if tape.chance(50) {
                    let (l, r) = (
                        scalar(ValueType::DateTime, schema, tape, d),
                        scalar(ValueType::DateTime, schema, tape, d),
                    );
                    return G::Sub(Box::new(l), Box::new(r));
                }
                let (l, r) = (scalar(ty, schema, tape, d), scalar(ty, schema, tape, d));
                return G::Add(Box::new(l), Box::new(r));
            }
            ValueType::DateTime => {
                let (l, r) = (scalar(ty, schema, tape, d), scalar(ValueType::Timespan, schema, tape, d));
                return G::Add(Box::new(l), Box::new(r));
            }
            _ => {}
        }
    }
    if !cols.is_empty() && tape.chance(60) {
        G::Col(cols[tape.pick(cols.len())].clone())
    } else {
        G::Lit(lit(ty, tape))
    }
}

const ORDER_OPS: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];

fn predicate(schema: &Schema, tape: &mut Tape, depth: usize) -> G {
    if depth < 2 && tape.chance(35) {
        let (l, r) = (predicate(schema, tape, depth + 1), predicate(schema, tape, depth + 1));
        return if tape.chance(50) {
            G::And(Box::new(l), Box::new(r))
        } else {
            G::Or(Box::new(l), Box::new(r))
        };
    }
    let types: Vec<ValueType> = [
        ValueType::Long,
        ValueType::String,
        ValueType::DateTime,
        ValueType::Timespan,
    ]
    .into_iter()
    .filter(|t| !cols_of(schema, *t).is_empty())
    .collect();
    let ty = if types.is_empty() {
        ValueType::Long
    } else {
        types[tape.pick(types.len())]
    };
    let op = if ty == ValueType::String {
        ORDER_OPS[tape.pick(2)]
    } else {
        ORDER_OPS[tape.pick(6)]
    };
    let cols = cols_of(schema, ty);
    let l = if cols.is_empty() {
        scalar(ty, schema, tape, 1)
    } else {
        G::Col(cols[tape.pick(cols.len())].clone())
    };
    let r = scalar(ty, schema, tape, 1);
    G::Cmp(op, Box::new(l), Box::new(r))
}

fn render(g: &G) -> String {
    // precedence: or < and < comparison < additive
    fn go(g: &G, parent: u8) -> String {
        let (prec, s) = match g {
            G::Col(c) => (9, c.clone()),
            G::Lit(v) => (
                9,
                match v {
                    Value::String(s) => format!("\"{s}\""),
                    Value::DateTime(dt) => format!("datetime({})", render_datetime(dt)),
                    Value::Timespan(ts) => format!("{}m", ts.as_micros() / 60_000_000),
                    other => other.render(),
                },
            ),
            G::Add(l, r) => (4, format!("{} + {}", go(l, 4), go(r, 5))),
            G::Sub(l, r) => (4, format!("{} - {}", go(l, 4), go(r, 5))),
            G::Cmp(op, l, r) => (3, format!("{} {op} {}", go(l, 4), go(r, 4))),
            G::And(l, r) => (2, format!("{} and {}", go(l, 2), go(r, 3))),
            G::Or(l, r) => (1, format!("{} or {}", go(l, 1), go(r, 2))),
        };
        if prec < parent {
            format!("({s})")
        } else {
            s
        }
    }
    go(g, 0)
}

fn expr_type(g: &G, schema: &Schema) -> ValueType {
    match g {
        G::Col(c) => schema.iter().find(|(n, _)| n == c).unwrap().1,
        G::Lit(v) => v.value_type(),
        G::Add(l, _) => expr_type(l, schema),
        G::Sub(l, r) => match (expr_type(l, schema), expr_type(r, schema)) {
            (ValueType::DateTime, ValueType::DateTime) => ValueType::Timespan,
            (t, _) => t,
        },
        _ => ValueType::Bool,
    }
}

fn gen_table(tape: &mut Tape) -> Table {
    let columns = vec![
        Column::new("K", ValueType::String),
        Column::new("N", ValueType::Long),
        Column::new("M", ValueType::Long),
        Column::new("T", ValueType::DateTime),
        Column::new("U", ValueType::DateTime),
        Column::new("D", ValueType::Timespan),
    ];
    let n = tape.pick(8);
    let rows = (0..n)
        .map(|_| columns.iter().map(|c| lit(c.ty, tape)).collect())
        .collect();
    Table {
        name: "Events".into(),
        columns,
        rows,
    }
}

pub fn gen_case(tape: &mut Tape) -> QueryCase {
    let table = gen_table(tape);
    let mut schema: Schema = table.columns.iter().map(|c| (c.name.clone(), c.ty)).collect();
    let mut stages = Vec::new();
    let mut text = String::from("Events");
    let mut fresh = 0;
    for _ in 0..1 + tape.pick(4) {
        fresh += 1;
        let stage = match tape.pick(5) {
            0 => GStage::Where(predicate(&schema, tape, 0)),
            1 => {
                let ty = [ValueType::Long, ValueType::Timespan, ValueType::DateTime][tape.pick(3)];
                GStage::Extend(format!("X{fresh}"), scalar(ty, &schema, tape, 0))
            }
            2 => {
                let mut by: Vec<String> = Vec::new();
                for _ in 0..tape.pick(3) {
                    let c = schema[tape.pick(schema.len())].0.clone();
                    if !by.contains(&c) {
                        by.push(c);
                    }
                }
                let mut aggs = Vec::new();
                let mut names: Vec<String> = by.clone();
                for j in 0..1 + tape.pick(3) {
                    let c = schema[tape.pick(schema.len())].0.clone();
                    let v = schema[tape.pick(schema.len())].0.clone();
                    let agg = match tape.pick(5) {
                        0 => Agg::Count,
                        1 => Agg::Min(c),
                        2 => Agg::Max(c),
                        3 => Agg::ArgMax(c, v),
                        _ => Agg::List(c),
                    };
                    let auto = auto_name(&agg);
                    let (name, explicit) = if j == 0 && !names.contains(&auto) && tape.chance(50) {
                        (auto, false)
                    } else {
                        (format!("A{fresh}_{j}"), true)
                    };
                    names.push(name.clone());
                    aggs.push((name, explicit, agg));
                }
                GStage::Summarize(aggs, by)
            }
            3 => {
                let mut pool: Vec<String> = schema.iter().map(|(n, _)| n.clone()).collect();
                let mut cols = Vec::new();
                for _ in 0..1 + tape.pick(pool.len()) {
                    cols.push(pool.remove(tape.pick(pool.len())));
                }
                GStage::Project(cols)
            }
            _ => GStage::Take(tape.pick(6)),
        };
        text.push_str("\n| ");
        text.push_str(&stage_text(&stage, tape));
        schema = next_schema(&stage, &schema);
        stages.push(stage);
    }
    QueryCase { table, text, stages }
}

fn auto_name(a: &Agg) -> String {
    match a {
        Agg::Count => "count_".into(),
        Agg::Min(c) => format!("min_{c}"),
        Agg::Max(c) => format!("max_{c}"),
        Agg::ArgMax(_, v) => format!("arg_max_{v}"),
        Agg::List(c) => format!("list_{c}"),
    }
}

fn stage_text(s: &GStage, tape: &mut Tape) -> String {
    match s {
        GStage::Where(g) => format!("where {}", render(g)),
        GStage::Extend(n, g) => {
            let kw = if tape.chance(20) { "extends" } else { "extend" };
            format!("{kw} {n} = {}", render(g))
        }
        GStage::Summarize(aggs, by) => {
            let parts: Vec<String> = aggs
                .iter()
                .map(|(name, explicit, a)| {
                    let call = match a {
                        Agg::Count => "count()".to_string(),
                        Agg::Min(c) => format!("min({c})"),
                        Agg::Max(c) => format!("max({c})"),
                        Agg::ArgMax(k, v) => format!("arg_max({k}, {v})"),
                        Agg::List(c) => format!("make_list({c})"),
                    };
                    if *explicit {
                        format!("{name} = {call}")
                    } else {
                        call
                    }
                })
                .collect();
            let mut out = format!("summarize {}", parts.join(", "));
            if !by.is_empty() {
                out.push_str(&format!(" by {}", by.join(", ")));
            }
            out
        }
        GStage::Project(cols) => format!("project {}", cols.join(", ")),
        GStage::Take(n) => {
            let kw = if tape.chance(30) { "limit" } else { "take" };
            format!("{kw} {n}")
        }
    }
}

fn next_schema(s: &GStage, schema: &Schema) -> Schema {
    let ty_of = |c: &str| schema.iter().find(|(n, _)| n == c).unwrap().1;
    match s {
        GStage::Where(_) | GStage::Take(_) => schema.clone(),
        GStage::Extend(n, g) => {
            let mut out = schema.clone();
            out.push((n.clone(), expr_type(g, schema)));
            out
        }
        GStage::Project(cols) => cols.iter().map(|c| (c.clone(), ty_of(c))).collect(),
        GStage::Summarize(aggs, by) => {
            let mut out: Schema = by.iter().map(|c| (c.clone(), ty_of(c))).collect();
            for (name, _, a) in aggs {
                let ty = match a {
                    Agg::Count => ValueType::Long,
                    Agg::List(_) => ValueType::String,
                    Agg::Min(c) | Agg::Max(c) => ty_of(c),
                    Agg::ArgMax(_, v) => ty_of(v),
                };
                out.push((name.clone(), ty));
            }
            out
        }
    }
}

// ---- reference evaluation ----

fn order(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Long(x), Value::Long(y)) => x.cmp(y),
        (Value::String(x), Value::String(y)) => x.cmp(y),
        (Value::DateTime(x), Value::DateTime(y)) => x.cmp(y),
        (Value::Timespan(x), Value::Timespan(y)) => x.as_micros().cmp(&y.as_micros()),
        _ => panic!("reference: unordered {a:?} {b:?}"),
    }
}

fn eval(g: &G, schema: &Schema, row: &[Value]) -> Value {
    match g {
        G::Col(c) => row[schema.iter().position(|(n, _)| n == c).unwrap()].clone(),
        G::Lit(v) => v.clone(),
        G::Add(l, r) | G::Sub(l, r) => {
            let plus = matches!(g, G::Add(..));
            let sign = if plus { 1 } else { -1 };
            match (eval(l, schema, row), eval(r, schema, row)) {
                (Value::Long(a), Value::Long(b)) => Value::Long(a + sign * b),
                (Value::DateTime(a), Value::DateTime(b)) => {
                    Value::Timespan(Timespan::from_micros((a - b).num_microseconds().unwrap()))
                }
                (Value::DateTime(a), Value::Timespan(b)) => {
                    Value::DateTime(a + chrono::Duration::microseconds(sign * b.as_micros()))
                }
                (Value::Timespan(a), Value::Timespan(b)) => {
                    Value::Timespan(Timespan::from_micros(a.as_micros() + sign * b.as_micros()))
                }
                (a, b) => panic!("reference: bad arithmetic {a:?} {b:?}"),
            }
        }
        G::Cmp(op, l, r) => {
            let o = order(&eval(l, schema, row), &eval(r, schema, row));
            Value::Bool(match *op {
                "==" => o == Ordering::Equal,
                "!=" => o != Ordering::Equal,
                "<" => o == Ordering::Less,
                "<=" => o != Ordering::Greater,
                ">" => o == Ordering::Greater,
                _ => o != Ordering::Less,
            })
        }
        G::And(l, r) => Value::Bool(truth(l, schema, row) && truth(r, schema, row)),
        G::Or(l, r) => Value::Bool(truth(l, schema, row) || truth(r, schema, row)),
    }
}

fn truth(g: &G, schema: &Schema, row: &[Value]) -> bool {
    matches!(eval(g, schema, row), Value::Bool(true))
}

fn reference(case: &QueryCase) -> (Schema, Vec<Vec<Value>>) {
    let mut schema: Schema = case.table.columns.iter().map(|c| (c.name.clone(), c.ty)).collect();
    let mut rows = case.table.rows.clone();
    for s in &case.stages {
        let idx = |c: &str| schema.iter().position(|(n, _)| n == c).unwrap();
        rows = match s {
            GStage::Where(g) => rows.into_iter().filter(|r| truth(g, &schema, r)).collect(),
            GStage::Take(n) => rows.into_iter().take(*n).collect(),
            GStage::Extend(_, g) => rows
                .into_iter()
                .map(|mut r| {
                    let v = eval(g, &schema, &r);
                    r.push(v);
                    r
                })
                .collect(),
            GStage::Project(cols) => rows
                .into_iter()
                .map(|r| cols.iter().map(|c| r[idx(c)].clone()).collect())
                .collect(),
            GStage::Summarize(aggs, by) => {
                let mut groups: Vec<(Vec<Value>, Vec<Vec<Value>>)> = Vec::new();
                for r in rows {
                    let key: Vec<Value> = by.iter().map(|c| r[idx(c)].clone()).collect();
                    match groups.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, members)) => members.push(r),
                        None => groups.push((key, vec![r])),
                    }
                }
                let totals = aggs.iter().all(|(_, _, a)| matches!(a, Agg::Count | Agg::List(_)));
                if by.is_empty() && groups.is_empty() && totals {
                    groups.push((Vec::new(), Vec::new()));
                }
                groups
                    .into_iter()
                    .map(|(key, members)| {
                        let mut out = key;
                        for (_, _, a) in aggs {
                            let best = |c: usize, want: Ordering| {
                                let mut b = 0;
                                for i in 1..members.len() {
                                    if order(&members[i][c], &members[b][c]) == want {
                                        b = i;
                                    }
                                }
                                b
                            };
                            out.push(match a {
                                Agg::Count => Value::Long(members.len() as i64),
                                Agg::List(c) => {
                                    let items: Vec<String> =
                                        members.iter().map(|m| m[idx(c)].render()).collect();
                                    Value::String(format!("[{}]", items.join(", ")))
                                }
                                Agg::Min(c) => members[best(idx(c), Ordering::Less)][idx(c)].clone(),
                                Agg::Max(c) => members[best(idx(c), Ordering::Greater)][idx(c)].clone(),
                                Agg::ArgMax(k, v) => {
                                    members[best(idx(k), Ordering::Greater)][idx(v)].clone()
                                }
                            });
                        }
                        out
                    })
                    .collect()
            }
        };
        schema = next_schema(s, &schema);
    }
    (schema, rows)
}

/// Runs the engine and the reference on one case.
pub fn check_case(case: &QueryCase) -> Result<(), String> {
    let store = TableStore::new();
    store.insert(case.table.clone());
    let got = run_query(&case.text, &store).map_err(|e| format!("engine error: {e}\n{}", case.text))?;
    let (schema, rows) = reference(case);
    let got_schema: Schema = got.columns.iter().map(|c| (c.name.clone(), c.ty)).collect();
    if got_schema != schema {
        return Err(format!("schema {got_schema:?} != {schema:?}\n{}", case.text));
    }
    if got.rows != rows {
        return Err(format!("rows differ\n{}\nengine {:?}\nreference {:?}", case.text, got.rows, rows));
    }
    Ok(())
}

pub fn case_strategy() -> impl Strategy<Value = QueryCase> {
    prop::collection::vec(any::<u32>(), 64..256).prop_map(|v| gen_case(&mut Tape::new(v)))
}
