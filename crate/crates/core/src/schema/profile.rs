use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SchemaCatalog, SqlType, ValueRange};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no data for {0}")]
    Missing(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Backend(String),
}

/// Source of sample values for one column. `None` stands for SQL NULL.
pub trait ValueSampler {
    fn sample(
        &mut self,
        table: &str,
        column: &str,
        limit: usize,
    ) -> Result<Vec<Option<String>>, SamplerError>;
}

/// In-memory samples keyed by `table.column`.
#[derive(Debug, Default, Clone)]
pub struct StaticSampler {
    values: HashMap<String, Vec<Option<String>>>,
}

impl StaticSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<I, S>(mut self, table: &str, column: &str, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.values.insert(
            format!("{}.{}", table.to_lowercase(), column.to_lowercase()),
            values.into_iter().map(|v| Some(v.into())).collect(),
        );
        self
    }
}

impl ValueSampler for StaticSampler {
    fn sample(
        &mut self,
        table: &str,
        column: &str,
        limit: usize,
    ) -> Result<Vec<Option<String>>, SamplerError> {
        let key = format!("{table}.{column}");
        self.values
            .get(&key)
            .map(|v| v.iter().take(limit).cloned().collect())
            .ok_or(SamplerError::Missing(key))
    }
}

/// Reads `<table>.tbl` (pipe-delimited) or `<table>.csv` files from a directory.
/// Column order follows the catalog.
pub struct CsvDirSampler {
    dir: PathBuf,
    column_order: HashMap<String, Vec<String>>,
    cache: HashMap<String, Vec<Vec<Option<String>>>>,
}

impl CsvDirSampler {
    pub fn new(dir: impl AsRef<Path>, catalog: &SchemaCatalog) -> Self {
        let column_order = catalog
            .tables
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    t.columns.iter().map(|c| c.name.clone()).collect(),
                )
            })
            .collect();
        CsvDirSampler {
            dir: dir.as_ref().to_path_buf(),
            column_order,
            cache: HashMap::new(),
        }
    }

    fn load(
        &mut self,
        table: &str,
        limit: usize,
    ) -> Result<&Vec<Vec<Option<String>>>, SamplerError> {
        if !self.cache.contains_key(table) {
            let (path, delimiter) = crate::harness::table_file(&self.dir, table)
                .ok_or_else(|| SamplerError::Missing(format!("data file for {table}")))?;
            let header = self.column_order.get(table).cloned().unwrap_or_default();
            let rows = crate::harness::read_table_rows(&path, delimiter, limit, Some(&header))
                .map_err(|e| SamplerError::Backend(e.to_string()))?;
            self.cache.insert(table.to_string(), rows);
        }
        Ok(&self.cache[table])
    }
}

impl ValueSampler for CsvDirSampler {
    fn sample(
        &mut self,
        table: &str,
        column: &str,
        limit: usize,
    ) -> Result<Vec<Option<String>>, SamplerError> {
        let index = self
            .column_order
            .get(table)
            .and_then(|cols| cols.iter().position(|c| c == column))
            .ok_or_else(|| SamplerError::Missing(format!("{table}.{column}")))?;
        let rows = self.load(table, limit)?;
        Ok(rows
            .iter()
            .map(|r| r.get(index).cloned().flatten())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    /// Rows sampled per column.
    pub sample_limit: usize,
    /// Columns with at most this many distinct values get their values enumerated.
    pub enumeration_threshold: usize,
    /// Distinct counts above this are reported as the cap.
    pub distinct_cap: u64,
    /// Fraction of non-null textual samples that must look like version strings.
    pub label_fraction: f64,
    /// `table.column` entries that are labels regardless of their values.
    pub label_columns: Vec<String>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            sample_limit: 10_000,
            enumeration_threshold: 20,
            distinct_cap: 10_000,
            label_fraction: 0.9,
            label_columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileWarning {
    pub table: String,
    pub column: String,
    pub message: String,
}

/// `digits(.digits)+`, e.g. `3.0.1`.
pub fn is_label_value(value: &str) -> bool {
    let parts: Vec<&str> = value.split('.').collect();
    parts.len() >= 2
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

/// Numeric columns order parseable values by value ahead of anything else.
fn compare_values(ty: SqlType, a: &str, b: &str) -> Ordering {
    if !ty.is_numeric() {
        return a.cmp(b);
    }
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Fills column metadata from sampled values. Tables, columns and keys are left
/// untouched; a failing sampler leaves that column's metadata as it was.
pub fn profile_columns(
    catalog: &SchemaCatalog,
    sampler: &mut dyn ValueSampler,
    config: &ProfileConfig,
) -> (SchemaCatalog, Vec<ProfileWarning>) {
    let mut out = catalog.clone();
    let mut warnings = Vec::new();
    let label_columns: BTreeSet<String> = config
        .label_columns
        .iter()
        .map(|c| c.to_lowercase())
        .collect();

    for table in &mut out.tables {
        for column in &mut table.columns {
            let qualified = format!("{}.{}", table.name, column.name);
            let samples = match sampler.sample(&table.name, &column.name, config.sample_limit) {
                Ok(s) => s,
                Err(e) => {
                    warnings.push(ProfileWarning {
                        table: table.name.clone(),
                        column: column.name.clone(),
                        message: e.to_string(),
                    });
                    if label_columns.contains(&qualified) {
                        column.metadata.is_label = true;
                    }
                    continue;
                }
            };
            let values: Vec<String> = samples.into_iter().flatten().collect();
            let ty = column.sql_type;
            let mut distinct: Vec<String> = values
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            distinct.sort_by(|a, b| compare_values(ty, a, b));

            let meta = &mut column.metadata;
            meta.distinct_value_count = Some((distinct.len() as u64).min(config.distinct_cap));
            meta.enumerated_values = (!distinct.is_empty()
                && distinct.len() <= config.enumeration_threshold)
                .then(|| distinct.clone());
            if let Some(values) = &meta.enumerated_values {
                meta.distinct_value_count = Some(values.len() as u64);
            }
            meta.value_range = match (distinct.first(), distinct.last()) {
                (Some(min), Some(max)) => Some(ValueRange {
                    min: min.clone(),
                    max: max.clone(),
                }),
                _ => None,
            };
            let matching = values.iter().filter(|v| is_label_value(v)).count();
            let textual_label = ty.is_textual()
                && !values.is_empty()
                && matching as f64 >= config.label_fraction * values.len() as f64;
            meta.is_label = textual_label || label_columns.contains(&qualified);
        }
    }
    (out, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ingest_ddl;

    fn catalog() -> SchemaCatalog {
        ingest_ddl("CREATE TABLE t (g CHAR(1), v VARCHAR(10), n INT)").unwrap()
    }

    #[test]
    fn enumerates_small_domains() {
        let mut sampler = StaticSampler::new()
            .with("t", "g", ["M", "F", "M", "F"])
            .with("t", "v", ["a"])
            .with("t", "n", ["1"]);
        let (out, warnings) = profile_columns(&catalog(), &mut sampler, &ProfileConfig::default());
        assert!(warnings.is_empty());
        let meta = &out.column("t", "g").unwrap().metadata;
        assert_eq!(
            meta.enumerated_values,
            Some(vec!["F".to_string(), "M".to_string()])
        );
        assert_eq!(meta.distinct_value_count, Some(2));
    }

    #[test]
    fn version_strings_are_labels() {
        let mut sampler = StaticSampler::new().with("t", "v", ["3.0.1", "2.7.0", "3.1.4"]);
        let (out, warnings) = profile_columns(&catalog(), &mut sampler, &ProfileConfig::default());
        assert!(out.column("t", "v").unwrap().metadata.is_label);
        assert!(!out.column("t", "g").unwrap().metadata.is_label);
        // g and n had no samples
        assert_eq!(warnings.len(), 2);
        assert!(out.column("t", "g").unwrap().metadata.is_empty());
    }

    #[test]
    fn many_distinct_values_are_not_enumerated() {
        let values: Vec<String> = (0..10_000).map(|i| i.to_string()).collect();
        let mut sampler = StaticSampler::new().with("t", "n", values);
        let config = ProfileConfig {
            distinct_cap: 1_000,
            ..Default::default()
        };
        let (out, _) = profile_columns(&catalog(), &mut sampler, &config);
        let meta = &out.column("t", "n").unwrap().metadata;
        assert!(meta.enumerated_values.is_none());
        assert_eq!(meta.distinct_value_count, Some(1_000));
        let range = meta.value_range.as_ref().unwrap();
        assert_eq!((range.min.as_str(), range.max.as_str()), ("0", "9999"));
    }

    #[test]
    fn configured_label_column() {
        let mut sampler = StaticSampler::new().with("t", "n", ["1", "2"]);
        let config = ProfileConfig {
            label_columns: vec!["t.n".into()],
            ..Default::default()
        };
        let (out, _) = profile_columns(&catalog(), &mut sampler, &config);
        assert!(out.column("t", "n").unwrap().metadata.is_label);
    }

    #[test]
    fn profiling_keeps_structure() {
        let mut sampler = StaticSampler::new().with("t", "g", ["A", "B"]);
        let before = catalog();
        let (after, _) = profile_columns(&before, &mut sampler, &ProfileConfig::default());
        assert_eq!(before.tables.len(), after.tables.len());
        for (a, b) in before.tables.iter().zip(&after.tables) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.primary_key, b.primary_key);
            let strip = |t: &crate::schema::TableDef| {
                t.columns
                    .iter()
                    .map(|c| (c.name.clone(), c.sql_type, c.nullable))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(a), strip(b));
        }
        assert_eq!(before.fk_edges, after.fk_edges);
    }

    #[test]
    fn label_pattern() {
        assert!(is_label_value("3.0.1"));
        assert!(is_label_value("10.2"));
        assert!(!is_label_value("3"));
        assert!(!is_label_value("3..1"));
        assert!(!is_label_value("v3.0"));
    }
}
