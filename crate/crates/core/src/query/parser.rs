use super::ast::{AggFunc, Aggregate, ArithOp, CmpOp, Expr, QueryPlan, Stage};
use super::lexer::{Lexer, Tok, Token};
use super::SyntaxError;
use crate::template;
use crate::value::Value;

/// Parses a fully substituted query into a plan.
pub fn parse_pipeline(text: &str) -> Result<QueryPlan, SyntaxError> {
    let tokens = Lexer::new(text, false).tokenize()?;
    let mut p = Parser {
        src: text,
        tokens,
        pos: 0,
        filter_mode: false,
    };
    let plan = p.pipeline()?;
    Ok(plan)
}

/// Parses a filter predicate template; `{Key}` operands are kept symbolic.
pub fn parse_predicate(text: &str) -> Result<Expr, SyntaxError> {
    let tokens = Lexer::new(text, true).tokenize()?;
    let mut p = Parser {
        src: text,
        tokens,
        pos: 0,
        filter_mode: true,
    };
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    filter_mode: bool,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].offset
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::at(self.src, self.offset(), msg)
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Eof => "end of query".into(),
            other => format!("{other:?}"),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), SyntaxError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {}", Self::describe(self.peek()))))
        }
    }

    fn expect_eof(&self) -> Result<(), SyntaxError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.err(format!("unexpected {}", Self::describe(self.peek()))))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.err(format!("expected {what}, found {}", Self::describe(&other)))),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn pipeline(&mut self) -> Result<QueryPlan, SyntaxError> {
        let source = self.ident("a table name")?;
        let mut stages = Vec::new();
        while *self.peek() == Tok::Pipe {
            self.bump();
            stages.push(self.stage()?);
        }
        self.expect_eof()?;
        Ok(QueryPlan { source, stages })
    }

    fn stage(&mut self) -> Result<Stage, SyntaxError> {
        let at = self.offset();
        let op = self.ident("an operator")?;
        match op.as_str() {
            "where" => Ok(Stage::Where(self.expr()?)),
            "summarize" => self.summarize(),
            "extend" | "extends" => {
                let mut cols = Vec::new();
                loop {
                    let name = self.ident("a column name")?;
                    self.expect(Tok::Assign, "'='")?;
                    cols.push((name, self.expr()?));
                    if *self.peek() != Tok::Comma {
                        break;
                    }
                    self.bump();
                }
                Ok(Stage::Extend(cols))
            }
            "project" => Ok(Stage::Project(self.ident_list()?)),
            "take" | "limit" => match self.bump() {
                Tok::Long(n) if n >= 0 => Ok(Stage::Take(n as usize)),
                _ => Err(SyntaxError::at(self.src, at, "take expects a non-negative integer")),
            },
            other => Err(SyntaxError::at(
                self.src,
                at,
                format!("unknown operator '{other}'"),
            )),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>, SyntaxError> {
        let mut out = vec![self.ident("a column name")?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.ident("a column name")?);
        }
        Ok(out)
    }

    fn summarize(&mut self) -> Result<Stage, SyntaxError> {
        let mut aggregates = Vec::new();
        if !self.is_keyword("by") {
            loop {
                aggregates.push(self.aggregate()?);
                if *self.peek() != Tok::Comma {
                    break;
                }
                self.bump();
            }
        }
        let by = if self.is_keyword("by") {
            self.bump();
            self.ident_list()?
        } else {
            Vec::new()
        };
        if aggregates.is_empty() && by.is_empty() {
            return Err(self.err("summarize needs aggregates or a by clause"));
        }
        Ok(Stage::Summarize { aggregates, by })
    }

    fn aggregate(&mut self) -> Result<Aggregate, SyntaxError> {
        let name = if matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Assign {
            let n = self.ident("a column name")?;
            self.bump();
            Some(n)
        } else {
            None
        };
        let at = self.offset();
        let func_name = self.ident("an aggregate")?;
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            args = self.ident_list()?;
        }
        self.expect(Tok::RParen, "')'")?;
        let arity = |n: usize| -> Result<(), SyntaxError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(SyntaxError::at(
                    self.src,
                    at,
                    format!("{func_name}() takes {n} argument(s), got {}", args.len()),
                ))
            }
        };
        let func = match func_name.as_str() {
            "count" => {
                arity(0)?;
                AggFunc::Count
            }
            "min" => {
                arity(1)?;
                AggFunc::Min(args[0].clone())
            }
            "max" => {
                arity(1)?;
                AggFunc::Max(args[0].clone())
            }
            "arg_max" => {
                arity(2)?;
                AggFunc::ArgMax(args[0].clone(), args[1].clone())
            }
            "make_list" => {
                arity(1)?;
                AggFunc::MakeList(args[0].clone())
            }
            other => {
                return Err(SyntaxError::at(
                    self.src,
                    at,
                    format!("unknown aggregate '{other}'"),
                ))
            }
        };
        Ok(Aggregate { name, func })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            let right = self.and_expr()?;
            left = Expr::or(left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.comparison()?;
        while self.is_keyword("and") {
            self.bump();
            let right = self.comparison()?;
            left = Expr::and(left, right);
        }
        Ok(left)
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(left),
        };
        self.bump();
        let right = self.additive()?;
        Ok(Expr::cmp(op, left, right))
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.unary()?;
            left = Expr::arith(op, left, right);
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            // fold negated literals so rendered plans parse back unchanged
            return Ok(match inner {
                Expr::Literal(Value::Long(n)) if n != i64::MIN => Expr::Literal(Value::Long(-n)),
                Expr::Literal(Value::Real(f)) => Expr::Literal(Value::Real(-f)),
                Expr::Literal(Value::Timespan(t)) if t.checked_neg().is_some() => {
                    Expr::Literal(Value::Timespan(t.checked_neg().expect("checked")))
                }
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let at = self.offset();
        match self.bump() {
            Tok::Long(n) => Ok(Expr::lit(n)),
            Tok::Real(f) => Ok(Expr::lit(f)),
            Tok::Span(t) => Ok(Expr::lit(t)),
            Tok::DateTime(d) => Ok(Expr::lit(d)),
            Tok::Bool(b) => Ok(Expr::lit(b)),
            Tok::Str(s) => {
                if self.filter_mode && !template::placeholders(&s).is_empty() {
                    Ok(Expr::Template(s))
                } else {
                    Ok(Expr::lit(s))
                }
            }
            Tok::Placeholder(k) => Ok(Expr::Placeholder(k)),
            Tok::Ident(name) => {
                if matches!(name.as_str(), "and" | "or" | "by") {
                    return Err(SyntaxError::at(
                        self.src,
                        at,
                        format!("unexpected keyword '{name}'"),
                    ));
                }
                if *self.peek() == Tok::LParen {
                    return Err(SyntaxError::at(
                        self.src,
                        at,
                        format!("unknown function '{name}'"),
                    ));
                }
                Ok(Expr::Column(name))
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            other => Err(SyntaxError::at(
                self.src,
                at,
                format!("expected an operand, found {}", Self::describe(&other)),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Timespan;

    const SNIPPET_TRIGGER: &str = r#"ManagementOperations
| where OperationName == "Upgrade"
| where ServerName == "s1"
| where DatabaseName == "db1"
| where TimeStamp >= datetime(2024-03-01T00:00:00.000000Z)
| where TimeStamp <= datetime(2024-03-02T00:00:00.000000Z)
| summarize UpgradeStart = min(TimeStamp),
  UpgradeEnd = max(TimeStamp),
  State = arg_max(TimeStamp, State)
  by OperationId
| extends Duration = UpgradeEnd - UpgradeStart"#;

    #[test]
    fn snippet_trigger_plan_shape() {
        let plan = parse_pipeline(SNIPPET_TRIGGER).unwrap();
        assert_eq!(plan.source, "ManagementOperations");
        assert_eq!(plan.stages.len(), 7);
        assert!(plan.stages[..5].iter().all(|s| matches!(s, Stage::Where(_))));
        match &plan.stages[5] {
            Stage::Summarize { aggregates, by } => {
                assert_eq!(by, &["OperationId"]);
                let names: Vec<_> = aggregates.iter().map(Aggregate::output_name).collect();
                assert_eq!(names, ["UpgradeStart", "UpgradeEnd", "State"]);
                assert_eq!(aggregates[2].func, AggFunc::ArgMax("TimeStamp".into(), "State".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(&plan.stages[6], Stage::Extend(c) if c[0].0 == "Duration"));
    }

    #[test]
    fn bare_table() {
        let plan = parse_pipeline("T").unwrap();
        assert_eq!(plan.source, "T");
        assert!(plan.stages.is_empty());
    }

    #[test]
    fn count_is_auto_named() {
        let plan = parse_pipeline("T | summarize count()").unwrap();
        match &plan.stages[0] {
            Stage::Summarize { aggregates, by } => {
                assert!(by.is_empty());
                assert_eq!(aggregates[0].output_name(), "count_");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_have_positions() {
        let e = parse_pipeline("T\n| sort by A").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        assert!(e.message.contains("unknown operator 'sort'"));
        let e = parse_pipeline("T | summarize avg(A)").unwrap_err();
        assert!(e.message.contains("unknown aggregate 'avg'"));
        assert!(parse_pipeline("T | where A ==").is_err());
        assert!(parse_pipeline("T | where A == \"{X}\" and {Y}").is_err());
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let e = parse_predicate("{A} > 1 or {B} == 2 and {C} < 3").unwrap();
        assert!(matches!(e, Expr::Or(_, ref r) if matches!(**r, Expr::And(_, _))));
    }

    #[test]
    fn negative_literals_fold() {
        let e = parse_predicate("{A} < -1").unwrap();
        assert_eq!(
            e,
            Expr::cmp(CmpOp::Lt, Expr::Placeholder("A".into()), Expr::lit(-1i64))
        );
        let e = parse_predicate("{D} > -1h").unwrap();
        assert_eq!(
            e,
            Expr::cmp(
                CmpOp::Gt,
                Expr::Placeholder("D".into()),
                Expr::lit(Timespan::from_hours(-1))
            )
        );
    }

    #[test]
    fn rendered_plan_reparses() {
        let plan = parse_pipeline(SNIPPET_TRIGGER).unwrap();
        assert_eq!(parse_pipeline(&plan.to_string()).unwrap(), plan);
    }
}
