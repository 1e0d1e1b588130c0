use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ForeignKey, Provenance, SchemaCatalog, TableDef};

/// Name-matching rule for foreign-key inference.
///
/// A column `c` of table `A` links to table `B` when `c` with `A`'s prefix
/// stripped equals `B`'s single-column primary key with `B`'s prefix stripped
/// (`n_regionkey` matches `r_regionkey`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FkInferenceConfig {
    pub enabled: bool,
    /// Detect a per-table prefix shared by every column (`l_` for lineitem).
    pub auto_prefix: bool,
    /// Explicit prefixes by table name; these win over detection.
    pub prefixes: BTreeMap<String, String>,
}

impl Default for FkInferenceConfig {
    fn default() -> Self {
        FkInferenceConfig {
            enabled: true,
            auto_prefix: true,
            prefixes: BTreeMap::new(),
        }
    }
}

impl FkInferenceConfig {
    pub fn prefix_for(&self, table: &TableDef) -> String {
        if let Some(p) = self.prefixes.get(&table.name) {
            return p.to_lowercase();
        }
        if self.auto_prefix {
            detect_prefix(table).unwrap_or_default()
        } else {
            String::new()
        }
    }
}

/// The text up to and including the first `_`, when all columns share it.
fn detect_prefix(table: &TableDef) -> Option<String> {
    let first = table.columns.first()?;
    let prefix = &first.name[..=first.name.find('_')?];
    if prefix.len() == first.name.len() {
        return None;
    }
    table
        .columns
        .iter()
        .all(|c| c.name.starts_with(prefix) && c.name.len() > prefix.len())
        .then(|| prefix.to_string())
}

fn strip<'a>(name: &'a str, prefix: &str) -> &'a str {
    name.strip_prefix(prefix).unwrap_or(name)
}

/// A candidate link that was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceAdvisory {
    pub table: String,
    pub column: String,
    pub candidates: Vec<String>,
    pub reason: String,
}

/// Adds inferred foreign keys by name matching. Never removes or duplicates an
/// edge, so repeated application is a no-op.
pub fn infer_foreign_keys(
    catalog: &SchemaCatalog,
    config: &FkInferenceConfig,
) -> (SchemaCatalog, Vec<InferenceAdvisory>) {
    let mut out = catalog.clone();
    let mut advisories = Vec::new();
    if !config.enabled {
        return (out, advisories);
    }

    // (table, stripped key name, key column) for every single-column primary key.
    let keys: Vec<(String, String, String)> = catalog
        .tables
        .iter()
        .filter(|t| t.primary_key.len() == 1)
        .map(|t| {
            let prefix = config.prefix_for(t);
            let key = t.primary_key[0].clone();
            (t.name.clone(), strip(&key, &prefix).to_string(), key)
        })
        .collect();

    for table in &catalog.tables {
        let prefix = config.prefix_for(table);
        for column in &table.columns {
            if table.primary_key.len() == 1 && table.primary_key[0] == column.name {
                continue;
            }
            let stripped = strip(&column.name, &prefix);
            let candidates: Vec<&(String, String, String)> = keys
                .iter()
                .filter(|(t, k, _)| *t != table.name && k == stripped)
                .collect();
            match candidates.as_slice() {
                [] => {}
                [(to_table, _, key)] => {
                    let edge = ForeignKey {
                        from_table: table.name.clone(),
                        from_columns: vec![column.name.clone()],
                        to_table: to_table.clone(),
                        to_columns: vec![key.clone()],
                        provenance: Provenance::Inferred,
                    };
                    if !out.fk_edges.iter().any(|e| e.same_link(&edge)) {
                        out.fk_edges.push(edge);
                    }
                }
                many => advisories.push(InferenceAdvisory {
                    table: table.name.clone(),
                    column: column.name.clone(),
                    candidates: many.iter().map(|(t, _, _)| t.clone()).collect(),
                    reason: "ambiguous match".into(),
                }),
            }
        }
    }
    (out, advisories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ingest_ddl;

    #[test]
    fn suffix_match_infers_edge() {
        let catalog = ingest_ddl(
            "CREATE TABLE region (r_regionkey INT PRIMARY KEY, r_name VARCHAR(25));\
             CREATE TABLE nation (n_nationkey INT PRIMARY KEY, n_name VARCHAR(25), n_regionkey INT);",
        )
        .unwrap();
        let (out, adv) = infer_foreign_keys(&catalog, &FkInferenceConfig::default());
        assert!(adv.is_empty());
        assert_eq!(out.fk_edges.len(), 1);
        let fk = &out.fk_edges[0];
        assert_eq!(fk.from_table, "nation");
        assert_eq!(fk.from_columns, vec!["n_regionkey".to_string()]);
        assert_eq!(fk.to_table, "region");
        assert_eq!(fk.provenance, Provenance::Inferred);
    }

    #[test]
    fn declared_edge_not_duplicated() {
        let catalog = ingest_ddl(
            "CREATE TABLE region (r_regionkey INT PRIMARY KEY);\
             CREATE TABLE nation (n_nationkey INT PRIMARY KEY, n_regionkey INT REFERENCES region(r_regionkey));",
        )
        .unwrap();
        let (out, _) = infer_foreign_keys(&catalog, &FkInferenceConfig::default());
        assert_eq!(out, catalog);
    }

    #[test]
    fn idempotent_and_monotone_on_tpch() {
        let catalog = ingest_ddl(crate::tpch::TPCH_DDL_KEYS_ONLY).unwrap();
        let config = FkInferenceConfig::default();
        let (once, _) = infer_foreign_keys(&catalog, &config);
        let (twice, _) = infer_foreign_keys(&once, &config);
        assert_eq!(once, twice);
        assert!(catalog.fk_edges.iter().all(|e| once.fk_edges.contains(e)));
        // Every single-column reference in the published schema is recovered.
        assert_eq!(once.fk_edges.len(), 9);
    }

    #[test]
    fn ambiguous_match_is_reported() {
        let catalog = ingest_ddl(
            "CREATE TABLE a (id INT PRIMARY KEY);\
             CREATE TABLE b (id INT PRIMARY KEY);\
             CREATE TABLE c (x INT, id INT);",
        )
        .unwrap();
        let config = FkInferenceConfig {
            auto_prefix: false,
            ..Default::default()
        };
        let (out, adv) = infer_foreign_keys(&catalog, &config);
        assert!(out.fk_edges.is_empty());
        assert_eq!(adv.len(), 1);
        assert_eq!(adv[0].candidates, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn disabled_is_identity() {
        let catalog = ingest_ddl(crate::tpch::TPCH_DDL_KEYS_ONLY).unwrap();
        let config = FkInferenceConfig {
            enabled: false,
            ..Default::default()
        };
        assert_eq!(infer_foreign_keys(&catalog, &config).0, catalog);
    }
}
