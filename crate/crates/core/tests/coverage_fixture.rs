//! Hand-profiled queries checked field by field against the profiler.

use std::collections::BTreeMap;

use querygen_core::coverage::profile_query;
use querygen_core::schema::ingest_ddl;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    sql: String,
    joins: u64,
    clauses: BTreeMap<String, u64>,
    operators: BTreeMap<String, u64>,
    functions: BTreeMap<String, u64>,
    subselects: u64,
    tables: BTreeMap<String, u64>,
    columns: BTreeMap<String, u64>,
}

#[test]
fn hand_profiled_corpus_matches() {
    let catalog = ingest_ddl(include_str!("../data/tpch.sql")).unwrap();
    let corpus: Vec<Expected> =
        serde_json::from_str(include_str!("fixtures/coverage_corpus.json")).unwrap();
    assert!(corpus.len() >= 20);
    let mut mismatches = Vec::new();
    for e in &corpus {
        let p = profile_query(&e.sql, &catalog).unwrap();
        let fields = [
            ("joins", p.join_count == e.joins),
            ("clauses", p.clause_counts == e.clauses),
            ("operators", p.operator_counts == e.operators),
            ("functions", p.function_counts == e.functions),
            ("subselects", p.subselect_count == e.subselects),
            ("tables", p.referenced_tables == e.tables),
            ("columns", p.referenced_columns == e.columns),
        ];
        for (name, ok) in fields {
            if !ok {
                mismatches.push(format!("{name}: {}\n  got {p:?}", e.sql));
            }
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}
