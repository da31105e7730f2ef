//! Tabular query mini-language: lexer, parser, typed evaluator and the
//! source abstraction the executor talks to.

pub mod ast;
pub mod eval;
pub mod lexer;
pub mod parser;
pub mod source;
pub mod table;

use std::fmt;

use thiserror::Error;

pub use ast::{AggFunc, Aggregate, ArithOp, CmpOp, Expr, QueryPlan, Stage};
pub use eval::{execute_pipeline, infer_schema, run_query};
pub use parser::{parse_pipeline, parse_predicate};
pub use source::{LocalSource, QuerySource, SourceRegistry};
pub use table::{cell_to_json, load_table_csv, Column, FixtureManifest, LoadError, Table, TableStore};

/// Parse failure with a 1-based line/column position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub message: String,
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl SyntaxError {
    pub fn at(src: &str, offset: usize, msg: impl Into<String>) -> Self {
        let offset = offset.min(src.len());
        let before = &src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before
            .rfind('\n')
            .map_or(before.chars().count(), |i| before[i + 1..].chars().count())
            + 1;
        SyntaxError {
            message: msg.into(),
            offset,
            line,
            column,
        }
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at line {}, column {}", self.message, self.line, self.column)
    }
}

impl std::error::Error for SyntaxError {}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("unknown table '{0}'")]
    UnknownTable(String),
    #[error("unknown source '{0}'")]
    UnknownSource(String),
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("evaluation error: {0}")]
    Runtime(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_one_based() {
        let e = SyntaxError::at("ab\ncd", 4, "x");
        assert_eq!((e.line, e.column), (2, 2));
        let e = SyntaxError::at("ab", 0, "x");
        assert_eq!((e.line, e.column), (1, 1));
    }
}
