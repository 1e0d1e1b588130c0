use std::collections::{BTreeMap, BTreeSet};

use sqlparser::ast::{
    AlterTableOperation, ColumnOption, CreateTable, DataType, ForeignKeyConstraint, ObjectName,
    ObjectNamePart, Statement, TableConstraint,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

use super::{ColumnDef, ForeignKey, Provenance, SchemaCatalog, SchemaError, SqlType, TableDef};

/// Restricts rendering to a subset of columns per table.
pub type ColumnFilter = BTreeMap<String, Vec<String>>;

/// One statement chunk with its starting position in the source text.
struct Chunk<'a> {
    text: &'a str,
    line: u64,
    column: u64,
}

/// Splits DDL text on top-level semicolons, skipping quoted text and comments.
fn split_statements(text: &str) -> Vec<Chunk<'_>> {
    let bytes = text.as_bytes();
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\'' | b'"' | b'`' => {
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() && bytes[i] != quote {
                    i += 1;
                }
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b';' => {
                chunks.push(make_chunk(text, start, i));
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    if start < text.len() {
        chunks.push(make_chunk(text, start, text.len()));
    }
    chunks.retain(|c| !is_blank(c.text));
    chunks
}

fn make_chunk(text: &str, start: usize, end: usize) -> Chunk<'_> {
    let before = &text[..start];
    let line = before.matches('\n').count() as u64 + 1;
    let column = match before.rfind('\n') {
        Some(nl) => (start - nl) as u64,
        None => start as u64 + 1,
    };
    Chunk {
        text: &text[start..end],
        line,
        column,
    }
}

/// True when the chunk holds only whitespace and comments.
fn is_blank(text: &str) -> bool {
    let mut rest = text.trim_start();
    loop {
        if rest.is_empty() {
            return true;
        }
        if let Some(r) = rest.strip_prefix("--") {
            rest = r.find('\n').map_or("", |nl| &r[nl..]).trim_start();
        } else if let Some(r) = rest.strip_prefix("/*") {
            rest = r.find("*/").map_or("", |end| &r[end + 2..]).trim_start();
        } else {
            return false;
        }
    }
}

/// Pulls "Line: L, Column: C" out of a parser message, if present.
pub(crate) fn error_position(message: &str) -> Option<(u64, u64)> {
    let at = message.rfind("Line: ")?;
    let rest = &message[at + 6..];
    let (line, rest) = rest.split_once(", Column: ")?;
    let column: String = rest.chars().take_while(char::is_ascii_digit).collect();
    Some((line.trim().parse().ok()?, column.parse().ok()?))
}

pub(crate) fn object_name(name: &ObjectName) -> String {
    name.0
        .last()
        .map(|part| match part {
            ObjectNamePart::Identifier(ident) => ident.value.to_lowercase(),
            ObjectNamePart::Function(f) => f.name.value.to_lowercase(),
        })
        .unwrap_or_default()
}

fn map_type(
    data_type: &DataType,
    table: &str,
    column: &str,
) -> Result<(SqlType, Vec<u64>), SchemaError> {
    let text = data_type.to_string().to_uppercase();
    let (name, args) = match text.split_once('(') {
        Some((name, rest)) => (
            name.trim().to_string(),
            rest.trim_end_matches(')').to_string(),
        ),
        None => (text.trim().to_string(), String::new()),
    };
    let sql_type = SqlType::from_type_name(&name).ok_or_else(|| SchemaError::UnsupportedType {
        table: table.to_string(),
        column: column.to_string(),
        ty: text.clone(),
    })?;
    let args = args
        .split(',')
        .filter_map(|a| a.trim().parse::<u64>().ok())
        .collect();
    Ok((sql_type, args))
}

/// Pending FK: the referenced columns may be omitted and resolved to the target's key later.
struct PendingFk {
    statement: usize,
    from_table: String,
    from_columns: Vec<String>,
    to_table: String,
    to_columns: Vec<String>,
}

fn pending_fk(
    statement: usize,
    from_table: &str,
    from_columns: Vec<String>,
    fk: &ForeignKeyConstraint,
) -> PendingFk {
    PendingFk {
        statement,
        from_table: from_table.to_string(),
        from_columns,
        to_table: object_name(&fk.foreign_table),
        to_columns: fk
            .referred_columns
            .iter()
            .map(|c| c.value.to_lowercase())
            .collect(),
    }
}

fn index_column_names(columns: &[sqlparser::ast::IndexColumn]) -> Vec<String> {
    columns
        .iter()
        .map(|c| c.column.expr.to_string().trim_matches('"').to_lowercase())
        .collect()
}

fn apply_constraint(
    statement: usize,
    table: &mut TableDef,
    constraint: &TableConstraint,
    pending: &mut Vec<PendingFk>,
) {
    match constraint {
        TableConstraint::PrimaryKey(pk) => {
            table.primary_key = index_column_names(&pk.columns);
            for key in table.primary_key.clone() {
                if let Some(col) = table.column_mut(&key) {
                    col.nullable = false;
                }
            }
        }
        TableConstraint::ForeignKey(fk) => {
            let from = fk.columns.iter().map(|c| c.value.to_lowercase()).collect();
            pending.push(pending_fk(statement, &table.name, from, fk));
        }
        _ => {}
    }
}

fn convert_create(
    statement: usize,
    create: &CreateTable,
    pending: &mut Vec<PendingFk>,
) -> Result<TableDef, SchemaError> {
    let name = object_name(&create.name);
    let mut table = TableDef {
        name: name.clone(),
        columns: Vec::new(),
        primary_key: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for column in &create.columns {
        let col_name = column.name.value.to_lowercase();
        if !seen.insert(col_name.clone()) {
            return Err(SchemaError::DuplicateObject(format!(
                "column {name}.{col_name}"
            )));
        }
        let (sql_type, type_args) = map_type(&column.data_type, &name, &col_name)?;
        let mut def = ColumnDef::new(col_name.clone(), sql_type);
        def.type_args = type_args;
        for option in &column.options {
            match &option.option {
                ColumnOption::NotNull => def.nullable = false,
                ColumnOption::Null => def.nullable = true,
                ColumnOption::PrimaryKey(_) => {
                    def.nullable = false;
                    table.primary_key = vec![col_name.clone()];
                }
                ColumnOption::ForeignKey(fk) => {
                    pending.push(pending_fk(statement, &name, vec![col_name.clone()], fk));
                }
                _ => {}
            }
        }
        table.columns.push(def);
    }
    for constraint in &create.constraints {
        apply_constraint(statement, &mut table, constraint, pending);
    }
    Ok(table)
}

/// Parses zero or more `CREATE TABLE` statements into a catalog.
///
/// Declared `PRIMARY KEY` and `FOREIGN KEY` clauses (inline, table-level or via
/// `ALTER TABLE ... ADD`) are captured with [`Provenance::Declared`]. View names
/// are recorded; other statements are ignored.
pub fn ingest_ddl(ddl_text: &str) -> Result<SchemaCatalog, SchemaError> {
    let dialect = GenericDialect {};
    let mut catalog = SchemaCatalog::empty("catalog");
    let mut pending = Vec::new();

    for (index, chunk) in split_statements(ddl_text).into_iter().enumerate() {
        let statements = Parser::parse_sql(&dialect, chunk.text).map_err(|e| {
            let message = e.to_string();
            let (line, column) = match error_position(&message) {
                Some((1, c)) => (chunk.line, chunk.column + c - 1),
                Some((l, c)) => (chunk.line + l - 1, c),
                None => (
                    chunk.line + chunk.text.matches('\n').count() as u64,
                    chunk.column,
                ),
            };
            SchemaError::DdlSyntax {
                statement: index,
                line,
                column,
                message,
            }
        })?;
        for statement in statements {
            match statement {
                Statement::CreateTable(create) => {
                    let table = convert_create(index, &create, &mut pending)?;
                    if catalog.table(&table.name).is_some() {
                        return Err(SchemaError::DuplicateObject(format!(
                            "table {}",
                            table.name
                        )));
                    }
                    catalog.tables.push(table);
                }
                Statement::AlterTable(alter) => {
                    let name = object_name(&alter.name);
                    let table = catalog
                        .table_mut(&name)
                        .ok_or_else(|| SchemaError::UnknownObject(format!("table {name}")))?;
                    for op in &alter.operations {
                        if let AlterTableOperation::AddConstraint { constraint, .. } = op {
                            apply_constraint(index, table, constraint, &mut pending);
                        }
                    }
                }
                Statement::CreateView(view) => {
                    let name = object_name(&view.name);
                    if catalog.views.contains(&name) || catalog.table(&name).is_some() {
                        return Err(SchemaError::DuplicateObject(format!("view {name}")));
                    }
                    catalog.views.push(name);
                }
                _ => {}
            }
        }
    }

    for fk in pending {
        let target = catalog.table(&fk.to_table).ok_or_else(|| {
            SchemaError::UnknownObject(format!(
                "table {} referenced by {} (statement {})",
                fk.to_table, fk.from_table, fk.statement
            ))
        })?;
        let to_columns = if fk.to_columns.is_empty() {
            target.primary_key.clone()
        } else {
            fk.to_columns
        };
        let edge = ForeignKey {
            from_table: fk.from_table,
            from_columns: fk.from_columns,
            to_table: fk.to_table,
            to_columns,
            provenance: Provenance::Declared,
        };
        if !catalog.fk_edges.iter().any(|e| e.same_link(&edge)) {
            catalog.fk_edges.push(edge);
        }
    }
    catalog.check()?;
    Ok(catalog)
}

fn render_table(
    catalog: &SchemaCatalog,
    table: &TableDef,
    keep: Option<&BTreeSet<String>>,
) -> String {
    let kept = |c: &str| keep.is_none_or(|k| k.contains(c));
    let mut lines: Vec<String> = table
        .columns
        .iter()
        .filter(|c| kept(&c.name))
        .map(|c| {
            let null = if c.nullable { "" } else { " NOT NULL" };
            format!("  {} {}{}", c.name, c.type_sql(), null)
        })
        .collect();
    if !table.primary_key.is_empty() && table.primary_key.iter().all(|k| kept(k)) {
        lines.push(format!("  PRIMARY KEY ({})", table.primary_key.join(", ")));
    }
    for fk in catalog
        .fk_edges
        .iter()
        .filter(|fk| fk.provenance == Provenance::Declared && fk.from_table == table.name)
    {
        if fk.from_columns.iter().all(|c| kept(c)) {
            lines.push(format!(
                "  FOREIGN KEY ({}) REFERENCES {} ({})",
                fk.from_columns.join(", "),
                fk.to_table,
                fk.to_columns.join(", ")
            ));
        }
    }
    format!("CREATE TABLE {} (\n{}\n);", table.name, lines.join(",\n"))
}

/// Canonical `CREATE TABLE` text per selected table, in catalog order.
///
/// Only declared foreign keys are rendered, so re-ingesting the output yields the
/// same declared catalog. A column filter drops unlisted columns, along with any
/// key clause that would reference them.
pub fn render_create_statements(
    catalog: &SchemaCatalog,
    table_filter: Option<&BTreeSet<String>>,
    column_filter: Option<&ColumnFilter>,
) -> Result<Vec<String>, SchemaError> {
    if let Some(filter) = table_filter {
        for name in filter {
            if catalog.table(name).is_none() {
                return Err(SchemaError::UnknownObject(format!("table {name}")));
            }
        }
    }
    if let Some(filter) = column_filter {
        for (table, columns) in filter {
            let def = catalog
                .table(table)
                .ok_or_else(|| SchemaError::UnknownObject(format!("table {table}")))?;
            for column in columns {
                if def.column(column).is_none() {
                    return Err(SchemaError::UnknownObject(format!(
                        "column {table}.{column}"
                    )));
                }
            }
        }
    }
    let statements = catalog
        .tables
        .iter()
        .filter(|t| table_filter.is_none_or(|f| f.iter().any(|n| n.to_lowercase() == t.name)))
        .map(|t| {
            let keep: Option<BTreeSet<String>> = column_filter.and_then(|f| {
                f.iter()
                    .find(|(name, _)| name.to_lowercase() == t.name)
                    .map(|(_, cols)| cols.iter().map(|c| c.to_lowercase()).collect())
            });
            render_table(catalog, t, keep.as_ref())
        })
        .collect();
    Ok(statements)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TABLES: &str = "CREATE TABLE r (rk INT PRIMARY KEY); \
        CREATE TABLE n (nk INT PRIMARY KEY, n_rk INT, FOREIGN KEY (n_rk) REFERENCES r(rk))";

    #[test]
    fn two_tables_one_fk() {
        let catalog = ingest_ddl(TWO_TABLES).unwrap();
        assert_eq!(catalog.tables.len(), 2);
        assert_eq!(catalog.fk_edges.len(), 1);
        let fk = &catalog.fk_edges[0];
        assert_eq!((fk.from_table.as_str(), fk.to_table.as_str()), ("n", "r"));
        assert_eq!(fk.provenance, Provenance::Declared);
    }

    #[test]
    fn empty_input() {
        let catalog = ingest_ddl("").unwrap();
        assert!(catalog.tables.is_empty());
        assert!(catalog.fk_edges.is_empty());
        assert!(ingest_ddl("  -- nothing here\n").unwrap().tables.is_empty());
    }

    #[test]
    fn syntax_error_reports_statement_index() {
        let err =
            ingest_ddl("CREATE TABLE a (x INT);\nCREATE TABLE b (x INT,, y INT);").unwrap_err();
        match err {
            SchemaError::DdlSyntax {
                statement, line, ..
            } => {
                assert_eq!(statement, 1);
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_table_rejected() {
        let err = ingest_ddl("CREATE TABLE a (x INT); CREATE TABLE A (y INT);").unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateObject(_)));
    }

    #[test]
    fn inline_reference_defaults_to_primary_key() {
        let catalog = ingest_ddl(
            "CREATE TABLE b (id INT PRIMARY KEY); CREATE TABLE a (id INT, b_id INT REFERENCES b);",
        )
        .unwrap();
        assert_eq!(catalog.fk_edges[0].to_columns, vec!["id".to_string()]);
    }

    #[test]
    fn alter_table_adds_keys() {
        let catalog = ingest_ddl(
            "CREATE TABLE b (id INT NOT NULL); CREATE TABLE a (b_id INT);\n\
             ALTER TABLE b ADD PRIMARY KEY (id);\n\
             ALTER TABLE a ADD FOREIGN KEY (b_id) REFERENCES b (id);",
        )
        .unwrap();
        assert_eq!(
            catalog.table("b").unwrap().primary_key,
            vec!["id".to_string()]
        );
        assert_eq!(catalog.fk_edges.len(), 1);
    }

    #[test]
    fn render_single_table() {
        let catalog = ingest_ddl(
            "CREATE TABLE t (a INT PRIMARY KEY, b VARCHAR(10), c DECIMAL(15,2), d DATE, e CHAR(1))",
        )
        .unwrap();
        let out = render_create_statements(&catalog, None, None).unwrap();
        assert_eq!(out.len(), 1);
        for col in ["a", "b", "c", "d", "e"] {
            assert!(
                out[0].contains(&format!("  {col} ")),
                "{col} missing in {}",
                out[0]
            );
        }
        assert_eq!(out, render_create_statements(&catalog, None, None).unwrap());
    }

    #[test]
    fn render_with_column_filter() {
        let catalog =
            ingest_ddl("CREATE TABLE t (a INT PRIMARY KEY, b INT, c INT, d INT, e INT)").unwrap();
        let mut filter = ColumnFilter::new();
        filter.insert("t".into(), vec!["b".into(), "d".into()]);
        let out = render_create_statements(&catalog, None, Some(&filter)).unwrap();
        assert_eq!(out[0], "CREATE TABLE t (\n  b INTEGER,\n  d INTEGER\n);");
    }

    #[test]
    fn render_filter_unknown_object() {
        let catalog = ingest_ddl("CREATE TABLE t (a INT)").unwrap();
        let tables: BTreeSet<String> = ["nope".to_string()].into();
        assert!(matches!(
            render_create_statements(&catalog, Some(&tables), None),
            Err(SchemaError::UnknownObject(_))
        ));
        let mut filter = ColumnFilter::new();
        filter.insert("t".into(), vec!["zz".into()]);
        assert!(render_create_statements(&catalog, None, Some(&filter)).is_err());
    }

    #[test]
    fn render_then_ingest_is_fixpoint() {
        let catalog = ingest_ddl(TWO_TABLES).unwrap();
        let rendered = render_create_statements(&catalog, None, None)
            .unwrap()
            .join("\n");
        assert_eq!(ingest_ddl(&rendered).unwrap(), catalog);
    }

    #[test]
    fn tpch_matches_published_schema() {
        let catalog = ingest_ddl(crate::tpch::TPCH_DDL).unwrap();
        // Eight tables and ten declared references, one of them the composite
        // lineitem -> partsupp key.
        assert_eq!(catalog.tables.len(), 8);
        assert_eq!(catalog.declared_fk_count(), 10);
        let columns: usize = catalog.tables.iter().map(|t| t.columns.len()).sum();
        assert_eq!(columns, 61);
    }
}
