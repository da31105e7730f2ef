use std::cmp::Ordering;
use std::collections::HashMap;

use super::ast::{AggFunc, ArithOp, CmpOp, Expr, QueryPlan, Stage};
use super::parser::parse_pipeline;
use super::table::{Column, Table, TableStore};
use super::QueryError;
use crate::value::{Value, ValueType};

/// Parses and executes substituted query text against the store.
pub fn run_query(text: &str, store: &TableStore) -> Result<Table, QueryError> {
    let plan = parse_pipeline(text)?;
    execute_pipeline(&plan, store)
}

/// Output schema of a plan, or the first static error.
pub fn infer_schema(plan: &QueryPlan, source: &[Column]) -> Result<Vec<Column>, QueryError> {
    let mut cols = source.to_vec();
    for stage in &plan.stages {
        cols = stage_schema(stage, &cols)?;
    }
    Ok(cols)
}

pub fn execute_pipeline(plan: &QueryPlan, store: &TableStore) -> Result<Table, QueryError> {
    let source = store
        .get(&plan.source)
        .ok_or_else(|| QueryError::UnknownTable(plan.source.clone()))?;
    // type the whole pipeline up front so errors do not depend on the data
    infer_schema(plan, &source.columns)?;
    let mut columns = source.columns.clone();
    let mut rows = source.rows.clone();
    for stage in &plan.stages {
        let next = stage_schema(stage, &columns)?;
        rows = apply_stage(stage, &columns, rows)?;
        columns = next;
    }
    Ok(Table {
        name: plan.source.clone(),
        columns,
        rows,
    })
}

fn index_of(cols: &[Column], name: &str) -> Result<usize, QueryError> {
    cols.iter()
        .position(|c| c.name == name)
        .ok_or_else(|| QueryError::UnknownColumn(name.to_string()))
}

fn type_err(msg: String) -> QueryError {
    QueryError::Type(msg)
}

pub(crate) fn arith_type(op: ArithOp, l: ValueType, r: ValueType) -> Option<ValueType> {
    use ValueType::*;
    match (l, r) {
        (Long, Long) => Some(Long),
        (Long | Real, Long | Real) => Some(Real),
        (DateTime, DateTime) if op == ArithOp::Sub => Some(Timespan),
        (DateTime, Timespan) => Some(DateTime),
        (Timespan, DateTime) if op == ArithOp::Add => Some(DateTime),
        (Timespan, Timespan) => Some(Timespan),
        _ => None,
    }
}

pub(crate) fn comparable(op: CmpOp, l: ValueType, r: ValueType) -> bool {
    if l.is_numeric() && r.is_numeric() {
        return true;
    }
    if l != r {
        return false;
    }
    op.is_equality() || l != ValueType::Bool
}

fn expr_type(e: &Expr, cols: &[Column]) -> Result<ValueType, QueryError> {
    match e {
        Expr::Literal(v) => Ok(v.value_type()),
        Expr::Column(c) => Ok(cols[index_of(cols, c)?].ty),
        Expr::Placeholder(k) => Err(type_err(format!("placeholder '{{{k}}}' in query"))),
        Expr::Template(t) => Err(type_err(format!("template '{t}' in query"))),
        Expr::Neg(inner) => match expr_type(inner, cols)? {
            t @ (ValueType::Long | ValueType::Real | ValueType::Timespan) => Ok(t),
            t => Err(type_err(format!("cannot negate a {t}"))),
        },
        Expr::Arith(op, l, r) => {
            let (lt, rt) = (expr_type(l, cols)?, expr_type(r, cols)?);
            arith_type(*op, lt, rt).ok_or_else(|| {
                let sym = if *op == ArithOp::Add { "+" } else { "-" };
                type_err(format!("cannot compute {lt} {sym} {rt}"))
            })
        }
        Expr::Compare(op, l, r) => {
            let (lt, rt) = (expr_type(l, cols)?, expr_type(r, cols)?);
            if comparable(*op, lt, rt) {
                Ok(ValueType::Bool)
            } else {
                Err(type_err(format!("cannot compare {lt} {} {rt}", op.symbol())))
            }
        }
        Expr::And(l, r) | Expr::Or(l, r) => {
            for side in [l, r] {
                let t = expr_type(side, cols)?;
                if t != ValueType::Bool {
                    return Err(type_err(format!("and/or operand is {t}, expected bool")));
                }
            }
            Ok(ValueType::Bool)
        }
    }
}

fn stage_schema(stage: &Stage, cols: &[Column]) -> Result<Vec<Column>, QueryError> {
    match stage {
        Stage::Where(e) => match expr_type(e, cols)? {
            ValueType::Bool => Ok(cols.to_vec()),
            t => Err(type_err(format!("where predicate is {t}, expected bool"))),
        },
        Stage::Take(_) => Ok(cols.to_vec()),
        Stage::Project(names) => {
            let mut out: Vec<Column> = Vec::new();
            for n in names {
                if out.iter().any(|c| &c.name == n) {
                    return Err(type_err(format!("column '{n}' projected twice")));
                }
                out.push(cols[index_of(cols, n)?].clone());
            }
            Ok(out)
        }
        Stage::Extend(defs) => {
            let mut out = cols.to_vec();
            for (name, e) in defs {
                let ty = expr_type(e, &out)?;
                if out.iter().any(|c| &c.name == name) {
                    return Err(type_err(format!("extend would overwrite column '{name}'")));
                }
                out.push(Column::new(name.clone(), ty));
            }
            Ok(out)
        }
        Stage::Summarize { aggregates, by } => {
            let mut out: Vec<Column> = Vec::new();
            let push = |c: Column, out: &mut Vec<Column>| {
                if out.iter().any(|o| o.name == c.name) {
                    Err(type_err(format!("summarize produces column '{}' twice", c.name)))
                } else {
                    out.push(c);
                    Ok(())
                }
            };
            for k in by {
                push(cols[index_of(cols, k)?].clone(), &mut out)?;
            }
            for a in aggregates {
                let ty = match &a.func {
                    AggFunc::Count => ValueType::Long,
                    AggFunc::MakeList(c) => {
                        index_of(cols, c)?;
                        ValueType::String
                    }
                    AggFunc::Min(c) | AggFunc::Max(c) => {
                        let t = cols[index_of(cols, c)?].ty;
                        if t == ValueType::Bool {
                            return Err(type_err(format!("min/max over bool column '{c}'")));
                        }
                        t
                    }
                    AggFunc::ArgMax(k, v) => {
                        let kt = cols[index_of(cols, k)?].ty;
                        if kt == ValueType::Bool {
                            return Err(type_err(format!("arg_max over bool column '{k}'")));
                        }
                        cols[index_of(cols, v)?].ty
                    }
                };
                push(Column::new(a.output_name(), ty), &mut out)?;
            }
            Ok(out)
        }
    }
}

fn runtime(msg: impl Into<String>) -> QueryError {
    QueryError::Runtime(msg.into())
}

pub(crate) fn arith(op: ArithOp, l: &Value, r: &Value) -> Result<Value, QueryError> {
    use Value::*;
    let overflow = || runtime(format!("overflow computing {l} and {r}"));
    let add = op == ArithOp::Add;
    Ok(match (l, r) {
        (Long(a), Long(b)) => {
            let v = if add { a.checked_add(*b) } else { a.checked_sub(*b) };
            Long(v.ok_or_else(overflow)?)
        }
        (Long(_) | Real(_), Long(_) | Real(_)) => {
            let a = as_f64(l);
            let b = as_f64(r);
            Real(if add { a + b } else { a - b })
        }
        (DateTime(a), DateTime(b)) if !add => Timespan(
            crate::value::Timespan::from_chrono(a.signed_duration_since(*b)).ok_or_else(overflow)?,
        ),
        (DateTime(a), Timespan(b)) => {
            let d = b.to_chrono();
            DateTime(
                if add { a.checked_add_signed(d) } else { a.checked_sub_signed(d) }
                    .ok_or_else(overflow)?,
            )
        }
        (Timespan(a), DateTime(b)) if add => {
            DateTime(b.checked_add_signed(a.to_chrono()).ok_or_else(overflow)?)
        }
        (Timespan(a), Timespan(b)) => Timespan(
            if add { a.checked_add(*b) } else { a.checked_sub(*b) }.ok_or_else(overflow)?,
        ),
        _ => return Err(type_err(format!("cannot combine {l} and {r}"))),
    })
}

fn as_f64(v: &Value) -> f64 {
    match v {
        Value::Long(n) => *n as f64,
        Value::Real(f) => *f,
        _ => f64::NAN,
    }
}

pub(crate) fn compare(op: CmpOp, l: &Value, r: &Value) -> Result<bool, QueryError> {
    let bad = || {
        type_err(format!(
            "cannot compare {} {} {}",
            l.value_type(),
            op.symbol(),
            r.value_type()
        ))
    };
    if op.is_equality() {
        let eq = l.try_eq(r).ok_or_else(bad)?;
        return Ok(if op == CmpOp::Eq { eq } else { !eq });
    }
    let ord = l.try_cmp(r).ok_or_else(bad)?;
    Ok(match op {
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Eq | CmpOp::Ne => unreachable!("handled above"),
    })
}

pub(crate) fn negate(v: &Value) -> Result<Value, QueryError> {
    match v {
        Value::Long(n) => n
            .checked_neg()
            .map(Value::Long)
            .ok_or_else(|| runtime(format!("overflow negating {n}"))),
        Value::Real(f) => Ok(Value::Real(-f)),
        Value::Timespan(t) => t
            .checked_neg()
            .map(Value::Timespan)
            .ok_or_else(|| runtime(format!("overflow negating {t}"))),
        other => Err(type_err(format!("cannot negate a {}", other.value_type()))),
    }
}

fn eval(e: &Expr, cols: &[Column], row: &[Value]) -> Result<Value, QueryError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Column(c) => Ok(row[index_of(cols, c)?].clone()),
        Expr::Placeholder(_) | Expr::Template(_) => Err(expr_type(e, cols).unwrap_err()),
        Expr::Neg(inner) => negate(&eval(inner, cols, row)?),
        Expr::Arith(op, l, r) => arith(*op, &eval(l, cols, row)?, &eval(r, cols, row)?),
        Expr::Compare(op, l, r) => {
            compare(*op, &eval(l, cols, row)?, &eval(r, cols, row)?).map(Value::Bool)
        }
        Expr::And(l, r) => {
            if !truthy(&eval(l, cols, row)?)? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(truthy(&eval(r, cols, row)?)?))
        }
        Expr::Or(l, r) => {
            if truthy(&eval(l, cols, row)?)? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(truthy(&eval(r, cols, row)?)?))
        }
    }
}

fn truthy(v: &Value) -> Result<bool, QueryError> {
    v.as_bool()
        .ok_or_else(|| type_err(format!("expected bool, got {}", v.value_type())))
}

fn apply_stage(
    stage: &Stage,
    cols: &[Column],
    rows: Vec<Vec<Value>>,
) -> Result<Vec<Vec<Value>>, QueryError> {
    match stage {
        Stage::Where(e) => {
            let mut out = Vec::new();
            for row in rows {
                if truthy(&eval(e, cols, &row)?)? {
                    out.push(row);
                }
            }
            Ok(out)
        }
        Stage::Take(n) => Ok(rows.into_iter().take(*n).collect()),
        Stage::Project(names) => {
            let idx = names
                .iter()
                .map(|n| index_of(cols, n))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(rows
                .into_iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect())
        }
        Stage::Extend(defs) => {
            let mut cur = cols.to_vec();
            let mut rows = rows;
            for (name, e) in defs {
                let ty = expr_type(e, &cur)?;
                for row in rows.iter_mut() {
                    let v = eval(e, &cur, row)?;
                    row.push(v);
                }
                cur.push(Column::new(name.clone(), ty));
            }
            Ok(rows)
        }
        Stage::Summarize { aggregates, by } => summarize(aggregates, by, cols, rows),
    }
}

fn summarize(
    aggregates: &[super::ast::Aggregate],
    by: &[String],
    cols: &[Column],
    rows: Vec<Vec<Value>>,
) -> Result<Vec<Vec<Value>>, QueryError> {
    let key_idx = by
        .iter()
        .map(|k| index_of(cols, k))
        .collect::<Result<Vec<_>, _>>()?;
    // groups in first-appearance order
    let mut order: Vec<Vec<Value>> = Vec::new();
    let mut groups: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        let key: Vec<Value> = key_idx.iter().map(|&k| row[k].clone()).collect();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    if by.is_empty() && rows.is_empty() {
        // a global summarize over nothing still yields a row when every
        // aggregate has a natural empty value
        let all_total = aggregates
            .iter()
            .all(|a| matches!(a.func, AggFunc::Count | AggFunc::MakeList(_)));
        if all_total && !aggregates.is_empty() {
            order.push(Vec::new());
            groups.insert(Vec::new(), Vec::new());
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let members = &groups[&key];
        let mut row = key;
        for a in aggregates {
            row.push(aggregate(&a.func, cols, &rows, members)?);
        }
        out.push(row);
    }
    Ok(out)
}

fn aggregate(
    func: &AggFunc,
    cols: &[Column],
    rows: &[Vec<Value>],
    members: &[usize],
) -> Result<Value, QueryError> {
    let pick = |c: usize, want: Ordering| -> Result<Option<usize>, QueryError> {
        let mut best = None;
        for &m in members {
            best = match best {
                None => Some(m),
                Some(b) => {
                    let ord = rows[m][c]
                        .try_cmp(&rows[b][c])
                        .ok_or_else(|| runtime("values are not ordered"))?;
                    // ties keep the earlier row
                    if ord == want {
                        Some(m)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        Ok(best)
    };
    let empty = || runtime("aggregate over an empty group");
    match func {
        AggFunc::Count => Ok(Value::Long(members.len() as i64)),
        AggFunc::MakeList(c) => {
            let c = index_of(cols, c)?;
            let items: Vec<String> = members.iter().map(|&m| rows[m][c].render()).collect();
            Ok(Value::String(format!("[{}]", items.join(", "))))
        }
        AggFunc::Min(c) => {
            let c = index_of(cols, c)?;
            let b = pick(c, Ordering::Less)?.ok_or_else(empty)?;
            Ok(rows[b][c].clone())
        }
        AggFunc::Max(c) => {
            let c = index_of(cols, c)?;
            let b = pick(c, Ordering::Greater)?.ok_or_else(empty)?;
            Ok(rows[b][c].clone())
        }
        AggFunc::ArgMax(k, v) => {
            let k = index_of(cols, k)?;
            let v = index_of(cols, v)?;
            let b = pick(k, Ordering::Greater)?.ok_or_else(empty)?;
            Ok(rows[b][v].clone())
        }
    }
}
