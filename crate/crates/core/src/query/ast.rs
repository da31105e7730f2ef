use std::fmt;

use crate::value::{render_datetime, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// Scalar expression shared by `where`, `extend` and step filter predicates.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Column(String),
    /// `{Key}`; only in filter predicates.
    Placeholder(String),
    /// String literal containing placeholders; only in filter predicates.
    Template(String),
    Neg(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Column(name.into())
    }

    pub fn cmp(op: CmpOp, l: Expr, r: Expr) -> Expr {
        Expr::Compare(op, Box::new(l), Box::new(r))
    }

    pub fn and(l: Expr, r: Expr) -> Expr {
        Expr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Expr, r: Expr) -> Expr {
        Expr::Or(Box::new(l), Box::new(r))
    }

    pub fn arith(op: ArithOp, l: Expr, r: Expr) -> Expr {
        Expr::Arith(op, Box::new(l), Box::new(r))
    }
}

pub(crate) fn quote_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Literal in query syntax; parses back to an equal value.
pub fn literal_text(v: &Value) -> String {
    match v {
        Value::String(s) => quote_string(s),
        Value::DateTime(dt) => format!("datetime({})", render_datetime(dt)),
        other => other.render(),
    }
}

// Fully parenthesized so that the text re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => f.write_str(&literal_text(v)),
            Expr::Column(c) => f.write_str(c),
            Expr::Placeholder(k) => write!(f, "{{{k}}}"),
            Expr::Template(t) => f.write_str(&quote_string(t)),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Arith(op, l, r) => {
                let sym = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                };
                write!(f, "({l} {sym} {r})")
            }
            Expr::Compare(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::And(l, r) => write!(f, "({l} and {r})"),
            Expr::Or(l, r) => write!(f, "({l} or {r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Min(String),
    Max(String),
    /// Value of the second column on the row maximizing the first.
    ArgMax(String, String),
    MakeList(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregate {
    pub name: Option<String>,
    pub func: AggFunc,
}

impl Aggregate {
    pub fn new(func: AggFunc) -> Self {
        Aggregate { name: None, func }
    }

    pub fn named(name: impl Into<String>, func: AggFunc) -> Self {
        Aggregate {
            name: Some(name.into()),
            func,
        }
    }

    /// Explicit name, or `count_`, `min_<c>`, `max_<c>`, `arg_max_<v>`, `list_<c>`.
    pub fn output_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.func {
            AggFunc::Count => "count_".into(),
            AggFunc::Min(c) => format!("min_{c}"),
            AggFunc::Max(c) => format!("max_{c}"),
            AggFunc::ArgMax(_, v) => format!("arg_max_{v}"),
            AggFunc::MakeList(c) => format!("list_{c}"),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(n) = &self.name {
            write!(f, "{n} = ")?;
        }
        match &self.func {
            AggFunc::Count => f.write_str("count()"),
            AggFunc::Min(c) => write!(f, "min({c})"),
            AggFunc::Max(c) => write!(f, "max({c})"),
            AggFunc::ArgMax(k, v) => write!(f, "arg_max({k}, {v})"),
            AggFunc::MakeList(c) => write!(f, "make_list({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Where(Expr),
    Summarize {
        aggregates: Vec<Aggregate>,
        by: Vec<String>,
    },
    Extend(Vec<(String, Expr)>),
    Project(Vec<String>),
    Take(usize),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Where(e) => write!(f, "where {e}"),
            Stage::Summarize { aggregates, by } => {
                f.write_str("summarize")?;
                for (i, a) in aggregates.iter().enumerate() {
                    write!(f, "{}{a}", if i == 0 { " " } else { ", " })?;
                }
                if !by.is_empty() {
                    write!(f, " by {}", by.join(", "))?;
                }
                Ok(())
            }
            Stage::Extend(cols) => {
                f.write_str("extend")?;
                for (i, (n, e)) in cols.iter().enumerate() {
                    write!(f, "{}{n} = {e}", if i == 0 { " " } else { ", " })?;
                }
                Ok(())
            }
            Stage::Project(cols) => write!(f, "project {}", cols.join(", ")),
            Stage::Take(n) => write!(f, "take {n}"),
        }
    }
}

/// Parsed query: a source table and its pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub source: String,
    pub stages: Vec<Stage>,
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)?;
        for s in &self.stages {
            write!(f, "\n| {s}")?;
        }
        Ok(())
    }
}
