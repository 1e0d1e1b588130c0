//! Syntax, relevance and duplicate filtering of candidate queries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::record::{QueryRecord, RejectionCode, ValidationReport};
use crate::schema::SchemaCatalog;
use crate::sql::{analyze, normalize_sql, parse_select, query_id, Issue, QueryTree, SyntaxError};
use crate::subschema::Subschema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorConfig {
    /// Require the query to use every subschema table, not just a subset of them.
    pub require_all_tables: bool,
    /// Replace literals by typed placeholders before comparing for duplicates.
    pub literal_placeholders: bool,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            require_all_tables: false,
            literal_placeholders: true,
        }
    }
}

pub fn validate_syntax(sql: &str) -> Result<QueryTree, SyntaxError> {
    parse_select(sql)
}

/// Rejection codes for a parsed query; empty when every check passes.
pub fn validate_relevance(
    tree: &QueryTree,
    catalog: &SchemaCatalog,
    subschema: Option<&Subschema>,
    config: &ValidatorConfig,
) -> Vec<RejectionCode> {
    let analysis = analyze(tree, catalog);
    let mut codes: Vec<RejectionCode> = analysis
        .issues
        .iter()
        .map(|issue| match issue {
            Issue::UnknownTable { .. }
            | Issue::UnknownColumn { .. }
            | Issue::AmbiguousColumn { .. } => RejectionCode::UnknownObject,
            Issue::LabelArithmetic { .. } => RejectionCode::LabelArithmetic,
            Issue::EnumLiteral { .. } => RejectionCode::EnumLiteralViolation,
        })
        .collect();
    if let Some(sub) = subschema {
        let outside = analysis.tables.keys().any(|t| !sub.contains(t));
        let missing = config.require_all_tables
            && sub.tables.iter().any(|t| !analysis.tables.contains_key(t));
        if outside || missing {
            codes.push(RejectionCode::UsesWrongTables);
        }
    }
    codes.sort();
    codes.dedup();
    codes
}

/// Syntax and relevance checks for one query. Duplicates are handled by
/// [`Deduplicator`].
pub fn validate_sql(
    sql: &str,
    catalog: &SchemaCatalog,
    subschema: Option<&Subschema>,
    config: &ValidatorConfig,
) -> ValidationReport {
    let codes = match validate_syntax(sql) {
        Ok(tree) => validate_relevance(&tree, catalog, subschema, config),
        Err(_) => vec![RejectionCode::Syntax],
    };
    ValidationReport::new(
        query_id(sql),
        codes,
        normalize_sql(sql, config.literal_placeholders),
    )
}

/// Remembers the normal forms seen so far in a corpus.
#[derive(Debug, Clone, Default)]
pub struct Deduplicator {
    seen: HashSet<String>,
    literal_placeholders: bool,
}

impl Deduplicator {
    pub fn new(literal_placeholders: bool) -> Self {
        Deduplicator {
            seen: HashSet::new(),
            literal_placeholders,
        }
    }

    /// Marks `sql` as seen; false when it was already.
    pub fn admit(&mut self, sql: &str) -> bool {
        self.seen
            .insert(normalize_sql(sql, self.literal_placeholders))
    }

    /// Splits `records` into first occurrences and later duplicates. Dropped
    /// records get the `duplicate` code.
    pub fn split(&mut self, records: Vec<QueryRecord>) -> (Vec<QueryRecord>, Vec<QueryRecord>) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for mut record in records {
            let form = normalize_sql(&record.sql, self.literal_placeholders);
            let report = record.validation.get_or_insert_with(|| {
                ValidationReport::new(record.id.clone(), Vec::new(), form.clone())
            });
            report.normalized_form = form.clone();
            if self.seen.insert(form) {
                kept.push(record);
            } else {
                report.reject(RejectionCode::Duplicate);
                dropped.push(record);
            }
        }
        (kept, dropped)
    }
}

/// Keeps the first record of every normal form, preserving order.
pub fn deduplicate(
    records: Vec<QueryRecord>,
    literal_placeholders: bool,
) -> (Vec<QueryRecord>, Vec<QueryRecord>) {
    Deduplicator::new(literal_placeholders).split(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Verdict;
    use crate::schema::ingest_ddl;

    fn catalog() -> SchemaCatalog {
        let mut c = ingest_ddl(
            "CREATE TABLE t (a INT, x INT, version VARCHAR(10), flag CHAR(1));\
             CREATE TABLE u (b INT)",
        )
        .unwrap();
        let t = c.table_mut("t").unwrap();
        t.column_mut("version").unwrap().metadata.is_label = true;
        let flag = &mut t.column_mut("flag").unwrap().metadata;
        flag.enumerated_values = Some(vec!["N".into(), "Y".into()]);
        flag.distinct_value_count = Some(2);
        c
    }

    fn codes(sql: &str) -> Vec<RejectionCode> {
        validate_sql(sql, &catalog(), None, &ValidatorConfig::default()).rejection_reasons
    }

    #[test]
    fn relevance_rules() {
        assert!(codes("SELECT a FROM t").is_empty());
        assert_eq!(
            codes("SELECT version + 1 FROM t"),
            vec![RejectionCode::LabelArithmetic]
        );
        assert_eq!(
            codes("SELECT a FROM t WHERE flag = 'MAYBE'"),
            vec![RejectionCode::EnumLiteralViolation]
        );
        assert_eq!(
            codes("SELECT nope FROM t"),
            vec![RejectionCode::UnknownObject]
        );
        assert_eq!(codes("SELECT FROM t"), vec![RejectionCode::Syntax]);
    }

    #[test]
    fn subschema_tables() {
        let c = catalog();
        let sub = Subschema {
            id: "s".into(),
            tables: vec!["t".into()],
            spanning_joins: vec![],
        };
        let config = ValidatorConfig::default();
        let report = validate_sql("SELECT b FROM u", &c, Some(&sub), &config);
        assert_eq!(
            report.rejection_reasons,
            vec![RejectionCode::UsesWrongTables]
        );
        assert_eq!(report.verdict, Verdict::Rejected);
        let wide = Subschema {
            tables: vec!["t".into(), "u".into()],
            ..sub
        };
        assert!(validate_sql("SELECT a FROM t", &c, Some(&wide), &config).accepted());
        let strict = ValidatorConfig {
            require_all_tables: true,
            ..config
        };
        assert!(!validate_sql("SELECT a FROM t", &c, Some(&wide), &strict).accepted());
    }

    fn records(sqls: &[&str]) -> Vec<QueryRecord> {
        sqls.iter()
            .map(|s| QueryRecord::mechanical(s.to_string(), "s", 0))
            .collect()
    }

    #[test]
    fn dedup() {
        let (kept, dropped) =
            deduplicate(records(&["SELECT a FROM t", "select  a  from  t"]), true);
        assert_eq!((kept.len(), dropped.len()), (1, 1));
        assert_eq!(
            dropped[0].validation.as_ref().unwrap().rejection_reasons,
            vec![RejectionCode::Duplicate]
        );
        let pair = ["SELECT a FROM t WHERE x=1", "SELECT a FROM t WHERE x=2"];
        assert_eq!(deduplicate(records(&pair), true).0.len(), 1);
        assert_eq!(deduplicate(records(&pair), false).0.len(), 2);
        assert_eq!(
            deduplicate(records(&["SELECT a FROM t", "SELECT x FROM t"]), true)
                .0
                .len(),
            2
        );
    }

    #[test]
    fn dedup_idempotent() {
        let (kept, _) = deduplicate(records(&["SELECT 1", "SELECT 1", "SELECT 2"]), true);
        let (again, dropped) = deduplicate(kept.clone(), true);
        assert!(dropped.is_empty());
        assert_eq!(again, kept);
    }
}
