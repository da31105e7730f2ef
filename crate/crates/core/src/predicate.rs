//! Step filter predicates: `{Duration} > 1h and {State} != "Complete"`.

use thiserror::Error;

use crate::context::ExecutionContext;
use crate::query::{eval, parse_predicate, Expr, QueryError, SyntaxError};
use crate::template;
use crate::value::Value;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("filter syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("filter references missing keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("filter evaluation error: {0}")]
    Eval(String),
}

/// Parses a predicate without evaluating it; used by validation.
pub fn check_filter(predicate: &str) -> Result<Expr, FilterError> {
    Ok(parse_predicate(predicate)?)
}

pub fn evaluate_filter(predicate: &str, ctx: &ExecutionContext) -> Result<bool, FilterError> {
    let missing = ctx.missing(&template::placeholders(predicate));
    if !missing.is_empty() {
        return Err(FilterError::MissingKeys(missing));
    }
    let expr = parse_predicate(predicate)?;
    match eval_expr(&expr, ctx)? {
        Value::Bool(b) => Ok(b),
        other => Err(FilterError::Eval(format!(
            "predicate evaluates to {}, expected bool",
            other.value_type()
        ))),
    }
}

fn qerr(e: QueryError) -> FilterError {
    match e {
        QueryError::Type(m) | QueryError::Runtime(m) => FilterError::Eval(m),
        other => FilterError::Eval(other.to_string()),
    }
}

fn as_bool(v: Value) -> Result<bool, FilterError> {
    v.as_bool().ok_or_else(|| {
        FilterError::Eval(format!("and/or operand is {}, expected bool", v.value_type()))
    })
}

fn eval_expr(e: &Expr, ctx: &ExecutionContext) -> Result<Value, FilterError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Placeholder(k) => ctx
            .get(k)
            .cloned()
            .ok_or_else(|| FilterError::MissingKeys(vec![k.clone()])),
        Expr::Template(t) => template::substitute(t, ctx)
            .map(Value::String)
            .map_err(|m| FilterError::MissingKeys(m.0)),
        Expr::Column(c) => Err(FilterError::Eval(format!(
            "bare identifier '{c}'; context keys are written {{{c}}}"
        ))),
        Expr::Neg(inner) => eval::negate(&eval_expr(inner, ctx)?).map_err(qerr),
        Expr::Arith(op, l, r) => {
            eval::arith(*op, &eval_expr(l, ctx)?, &eval_expr(r, ctx)?).map_err(qerr)
        }
        Expr::Compare(op, l, r) => eval::compare(*op, &eval_expr(l, ctx)?, &eval_expr(r, ctx)?)
            .map(Value::Bool)
            .map_err(qerr),
        Expr::And(l, r) => {
            if !as_bool(eval_expr(l, ctx)?)? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(as_bool(eval_expr(r, ctx)?)?))
        }
        Expr::Or(l, r) => {
            if as_bool(eval_expr(l, ctx)?)? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(as_bool(eval_expr(r, ctx)?)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Timespan;
    use proptest::prelude::*;

    const LONG_RUNNING: &str = "{Duration} > 1h and {State} != \"Complete\"";

    fn ctx(pairs: &[(&str, Value)]) -> ExecutionContext {
        pairs.iter().cloned().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn long_running_upgrade() {
        let c = ctx(&[
            ("Duration", Timespan::from_hours(2).into()),
            ("State", "Running".into()),
        ]);
        assert!(evaluate_filter(LONG_RUNNING, &c).unwrap());
        let c = ctx(&[
            ("Duration", Timespan::from_minutes(30).into()),
            ("State", "Running".into()),
        ]);
        assert!(!evaluate_filter(LONG_RUNNING, &c).unwrap());
    }

    #[test]
    fn missing_keys_are_reported() {
        let c = ctx(&[("State", "Running".into())]);
        assert_eq!(
            evaluate_filter(LONG_RUNNING, &c),
            Err(FilterError::MissingKeys(vec!["Duration".into()]))
        );
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let c = ctx(&[("A", "x".into())]);
        assert!(matches!(evaluate_filter("{A} > 1", &c), Err(FilterError::Eval(_))));
        let c = ctx(&[("D", Timespan::from_hours(1).into())]);
        assert!(matches!(evaluate_filter("{D} > 5", &c), Err(FilterError::Eval(_))));
    }

    #[test]
    fn templates_inside_strings() {
        let c = ctx(&[("S", "s1".into()), ("N", "s1-db".into())]);
        assert!(evaluate_filter("{N} == \"{S}-db\"", &c).unwrap());
    }

    #[test]
    fn datetime_placeholder_form() {
        let t: Value = crate::value::parse_datetime("2024-03-01T10:00:00Z").unwrap().into();
        let c = ctx(&[("T", t)]);
        assert!(evaluate_filter("datetime({T}) > datetime(2024-03-01)", &c).unwrap());
    }

    // truth table oracle for ({A} > 1 or {A} < -1) and {B} == "x"
    proptest! {
        #[test]
        fn three_operator_truth_table(a in -4i64..4, b in prop::sample::select(vec!["x", "y"])) {
            let c = ctx(&[("A", Value::Long(a)), ("B", b.into())]);
            let expected = !(-1..=1).contains(&a) && b == "x";
            prop_assert_eq!(
                evaluate_filter("({A} > 1 or {A} < -1) and {B} == \"x\"", &c).unwrap(),
                expected
            );
        }
    }

    #[test]
    fn snippet_style_example_from_zero() {
        let c = ctx(&[("A", Value::Long(0)), ("B", "x".into())]);
        assert!(!evaluate_filter("({A} > 1 or {A} < -1) and {B} == \"x\"", &c).unwrap());
    }
}
