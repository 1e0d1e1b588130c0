//! SQL parsing, normalization and scoped analysis shared by the validators and
//! the coverage analyzer.

mod analyze;
mod normalize;

use std::fmt;
use std::ops::ControlFlow;

use sqlparser::ast::{Query, Select, SetExpr, Statement, Visit, Visitor};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

pub use analyze::{analyze, structure_counts, Analysis, Issue, StructureCounts};
pub use normalize::{normalize_sql, query_id};

pub use sqlparser::ast::Query as QueryTree;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub message: String,
    pub line: Option<u64>,
    pub column: Option<u64>,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(line), Some(column)) => {
                write!(f, "{} (line {line}, column {column})", self.message)
            }
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for SyntaxError {}

impl SyntaxError {
    fn plain(message: impl Into<String>) -> Self {
        SyntaxError {
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

struct EmptyProjection;

impl Visitor for EmptyProjection {
    type Break = ();

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        if select.projection.is_empty() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Parses exactly one query statement (SELECT, WITH, set operations). A
/// trailing semicolon is allowed.
pub fn parse_select(sql: &str) -> Result<Query, SyntaxError> {
    let mut statements = Parser::parse_sql(&GenericDialect {}, sql).map_err(|e| {
        let message = e.to_string();
        let position = crate::schema::ddl::error_position(&message);
        SyntaxError {
            message,
            line: position.map(|p| p.0),
            column: position.map(|p| p.1),
        }
    })?;
    if statements.len() != 1 {
        return Err(SyntaxError::plain(format!(
            "expected one statement, found {}",
            statements.len()
        )));
    }
    let Statement::Query(query) = statements.remove(0) else {
        return Err(SyntaxError::plain("statement is not a query"));
    };
    if !matches!(
        *query.body,
        SetExpr::Select(_) | SetExpr::SetOperation { .. } | SetExpr::Query(_)
    ) {
        return Err(SyntaxError::plain("query body is not a SELECT"));
    }
    if query.visit(&mut EmptyProjection).is_break() {
        return Err(SyntaxError::plain("SELECT without a select list"));
    }
    Ok(*query)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_queries() {
        assert!(parse_select("SELECT 1").is_ok());
        assert!(parse_select("SELECT a, COUNT(*) FROM t GROUP BY a HAVING COUNT(*) > 1").is_ok());
        assert!(parse_select("SELECT a FROM t UNION SELECT b FROM u ORDER BY 1;").is_ok());
        assert!(parse_select("WITH x AS (SELECT 1 AS one) SELECT one FROM x").is_ok());
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_select("SELECT FROM t").is_err());
        assert!(parse_select("").is_err());
        assert!(parse_select("SELECT 1; SELECT 2").is_err());
        assert!(parse_select("DELETE FROM t").is_err());
        let err = parse_select("SELECT a FROM t WHERE").unwrap_err();
        assert!(!err.message.is_empty());
        let err = parse_select("SELECT a\nFROM t WHERE )").unwrap_err();
        assert_eq!(err.line, Some(2));
    }
}
