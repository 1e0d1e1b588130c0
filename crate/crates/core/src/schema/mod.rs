//! Schema catalog: tables, columns, keys and the metadata that DDL does not
//! declare (enumerations, label columns, inferred foreign keys).

pub(crate) mod ddl;
mod infer;
mod profile;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ddl::{ingest_ddl, render_create_statements, ColumnFilter};
pub use infer::{infer_foreign_keys, FkInferenceConfig, InferenceAdvisory};
pub use profile::{
    is_label_value, profile_columns, CsvDirSampler, ProfileConfig, ProfileWarning, SamplerError,
    StaticSampler, ValueSampler,
};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error(
        "DDL syntax error in statement {statement} at line {line}, column {column}: {message}"
    )]
    DdlSyntax {
        statement: usize,
        line: u64,
        column: u64,
        message: String,
    },
    #[error("duplicate object: {0}")]
    DuplicateObject(String),
    #[error("unknown object: {0}")]
    UnknownObject(String),
    #[error("invalid foreign key: {0}")]
    InvalidForeignKey(String),
    #[error("invalid column metadata: {0}")]
    InvalidMetadata(String),
    #[error("unsupported column type `{ty}` for {table}.{column}")]
    UnsupportedType {
        table: String,
        column: String,
        ty: String,
    },
    #[error("invalid catalog JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Column type families. Lengths and precisions live in [`ColumnDef::type_args`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlType {
    Integer,
    Decimal,
    Float,
    Char,
    Varchar,
    Date,
    Boolean,
}

impl SqlType {
    pub fn is_numeric(self) -> bool {
        matches!(self, SqlType::Integer | SqlType::Decimal | SqlType::Float)
    }

    pub fn is_textual(self) -> bool {
        matches!(self, SqlType::Char | SqlType::Varchar)
    }

    /// Maps a SQL type name (already upper-cased, without arguments).
    pub fn from_type_name(name: &str) -> Option<SqlType> {
        let ty = match name {
            "INT" | "INTEGER" | "BIGINT" | "SMALLINT" | "TINYINT" | "INT2" | "INT4" | "INT8"
            | "INT64" | "SERIAL" | "BIGSERIAL" => SqlType::Integer,
            "DECIMAL" | "NUMERIC" | "DEC" | "NUMBER" => SqlType::Decimal,
            "FLOAT" | "REAL" | "DOUBLE" | "DOUBLE PRECISION" | "FLOAT4" | "FLOAT8" | "FLOAT64" => {
                SqlType::Float
            }
            "CHAR" | "CHARACTER" | "NCHAR" => SqlType::Char,
            "VARCHAR" | "CHARACTER VARYING" | "NVARCHAR" | "VARCHAR2" | "TEXT" | "STRING"
            | "CLOB" => SqlType::Varchar,
            "DATE" | "TIMESTAMP" | "DATETIME" | "TIME" => SqlType::Date,
            "BOOLEAN" | "BOOL" => SqlType::Boolean,
            _ => return None,
        };
        Some(ty)
    }

    pub fn sql_name(self) -> &'static str {
        match self {
            SqlType::Integer => "INTEGER",
            SqlType::Decimal => "DECIMAL",
            SqlType::Float => "FLOAT",
            SqlType::Char => "CHAR",
            SqlType::Varchar => "VARCHAR",
            SqlType::Date => "DATE",
            SqlType::Boolean => "BOOLEAN",
        }
    }
}

impl fmt::Display for SqlType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sql_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: String,
    pub max: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinct_value_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumerated_values: Option<Vec<String>>,
    #[serde(default)]
    pub is_label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_range: Option<ValueRange>,
}

impl ColumnMetadata {
    pub fn is_empty(&self) -> bool {
        self == &ColumnMetadata::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub sql_type: SqlType,
    /// Length for character types, precision and scale for decimals.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_args: Vec<u64>,
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "ColumnMetadata::is_empty")]
    pub metadata: ColumnMetadata,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, sql_type: SqlType) -> Self {
        ColumnDef {
            name: name.into().to_lowercase(),
            sql_type,
            type_args: Vec::new(),
            nullable: true,
            metadata: ColumnMetadata::default(),
        }
    }

    /// True when arithmetic on this column is meaningful.
    pub fn supports_arithmetic(&self) -> bool {
        self.sql_type.is_numeric() && !self.metadata.is_label
    }

    pub fn type_sql(&self) -> String {
        if self.type_args.is_empty() {
            self.sql_type.sql_name().to_string()
        } else {
            let args: Vec<String> = self.type_args.iter().map(u64::to_string).collect();
            format!("{}({})", self.sql_type.sql_name(), args.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        let name = name.to_lowercase();
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut ColumnDef> {
        let name = name.to_lowercase();
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let name = name.to_lowercase();
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Declared,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_columns: Vec<String>,
    pub to_table: String,
    pub to_columns: Vec<String>,
    pub provenance: Provenance,
}

impl ForeignKey {
    /// Same linkage regardless of provenance.
    pub fn same_link(&self, other: &ForeignKey) -> bool {
        self.from_table == other.from_table
            && self.from_columns == other.from_columns
            && self.to_table == other.to_table
            && self.to_columns == other.to_columns
    }
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}) -> {}({})",
            self.from_table,
            self.from_columns.join(","),
            self.to_table,
            self.to_columns.join(",")
        )
    }
}

/// The schema ground truth that generation and validation resolve against.
/// Identifiers are stored lower-case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub name: String,
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub fk_edges: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<String>,
}

impl SchemaCatalog {
    /// Builds a catalog and checks its invariants.
    pub fn new(
        name: impl Into<String>,
        tables: Vec<TableDef>,
        fk_edges: Vec<ForeignKey>,
    ) -> Result<Self, SchemaError> {
        let catalog = SchemaCatalog {
            name: name.into(),
            tables,
            fk_edges,
            views: Vec::new(),
        };
        catalog.check()?;
        Ok(catalog)
    }

    pub fn empty(name: impl Into<String>) -> Self {
        SchemaCatalog {
            name: name.into(),
            tables: Vec::new(),
            fk_edges: Vec::new(),
            views: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for table in &self.tables {
            if !seen.insert(table.name.to_lowercase()) {
                return Err(SchemaError::DuplicateObject(format!(
                    "table {}",
                    table.name
                )));
            }
            let mut cols = BTreeSet::new();
            for column in &table.columns {
                if !cols.insert(column.name.to_lowercase()) {
                    return Err(SchemaError::DuplicateObject(format!(
                        "column {}.{}",
                        table.name, column.name
                    )));
                }
                if let Some(values) = &column.metadata.enumerated_values {
                    if column.metadata.distinct_value_count != Some(values.len() as u64) {
                        return Err(SchemaError::InvalidMetadata(format!(
                            "{}.{}: enumerated values disagree with distinct count",
                            table.name, column.name
                        )));
                    }
                }
            }
            for key in &table.primary_key {
                if table.column(key).is_none() {
                    return Err(SchemaError::UnknownObject(format!(
                        "primary key column {}.{key}",
                        table.name
                    )));
                }
            }
        }
        for fk in &self.fk_edges {
            self.check_fk(fk)?;
        }
        Ok(())
    }

    fn check_fk(&self, fk: &ForeignKey) -> Result<(), SchemaError> {
        if fk.from_columns.is_empty() || fk.from_columns.len() != fk.to_columns.len() {
            return Err(SchemaError::InvalidForeignKey(format!(
                "{fk}: column lists must be nonempty and of equal length"
            )));
        }
        for (table, columns) in [
            (&fk.from_table, &fk.from_columns),
            (&fk.to_table, &fk.to_columns),
        ] {
            let def = self
                .table(table)
                .ok_or_else(|| SchemaError::UnknownObject(format!("table {table} in {fk}")))?;
            for c in columns {
                if def.column(c).is_none() {
                    return Err(SchemaError::UnknownObject(format!(
                        "column {table}.{c} in {fk}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        let name = name.to_lowercase();
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut TableDef> {
        let name = name.to_lowercase();
        self.tables.iter_mut().find(|t| t.name == name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDef> {
        self.table(table).and_then(|t| t.column(column))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }

    /// Every `table.column` in catalog order.
    pub fn qualified_columns(&self) -> Vec<String> {
        self.tables
            .iter()
            .flat_map(|t| {
                t.columns
                    .iter()
                    .map(move |c| format!("{}.{}", t.name, c.name))
            })
            .collect()
    }

    pub fn declared_fk_count(&self) -> usize {
        self.fk_edges
            .iter()
            .filter(|fk| fk.provenance == Provenance::Declared)
            .count()
    }

    /// Copy restricted to declared foreign keys.
    pub fn declared_only(&self) -> SchemaCatalog {
        let mut copy = self.clone();
        copy.fk_edges
            .retain(|fk| fk.provenance == Provenance::Declared);
        copy
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let catalog: SchemaCatalog = serde_json::from_str(text)?;
        catalog.check()?;
        Ok(catalog)
    }
}
