use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rusqlite::{params_from_iter, Connection};

use super::{read_table_rows, table_file, Driver, HarnessError, Outcome};
use crate::schema::{render_create_statements, SamplerError, SchemaCatalog, ValueSampler};

/// Embedded SQLite engine. Timeouts are enforced through the progress handler.
pub struct SqliteDriver {
    engine_id: String,
    conn: Connection,
    deadline: Arc<Mutex<Option<Instant>>>,
}

impl SqliteDriver {
    pub fn open_in_memory(engine_id: &str) -> Result<Self, HarnessError> {
        Self::wrap(engine_id, Connection::open_in_memory())
    }

    pub fn open(engine_id: &str, path: &Path) -> Result<Self, HarnessError> {
        Self::wrap(engine_id, Connection::open(path))
    }

    fn wrap(engine_id: &str, conn: rusqlite::Result<Connection>) -> Result<Self, HarnessError> {
        let connection_error = |e: rusqlite::Error| HarnessError::Connection {
            engine: engine_id.to_string(),
            message: e.to_string(),
        };
        let conn = conn.map_err(connection_error)?;
        let deadline: Arc<Mutex<Option<Instant>>> = Arc::new(Mutex::new(None));
        let watched = Arc::clone(&deadline);
        conn.progress_handler(
            1_000,
            Some(move || {
                let deadline = *watched.lock().expect("deadline lock");
                deadline.is_some_and(|d| Instant::now() >= d)
            }),
        )
        .map_err(connection_error)?;
        Ok(SqliteDriver {
            engine_id: engine_id.to_string(),
            conn,
            deadline,
        })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub fn connection_mut(&mut self) -> &mut Connection {
        &mut self.conn
    }

    fn consume(&self, sql: &str) -> rusqlite::Result<u64> {
        let mut stmt = self.conn.prepare(sql)?;
        let width = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut count = 0;
        while let Some(row) = rows.next()? {
            for i in 0..width {
                row.get_ref(i)?;
            }
            count += 1;
        }
        Ok(count)
    }
}

impl Driver for SqliteDriver {
    fn engine_id(&self) -> &str {
        &self.engine_id
    }

    fn check(&mut self) -> Result<(), HarnessError> {
        self.conn
            .query_row("SELECT 1", [], |_| Ok(()))
            .map_err(|e| HarnessError::Connection {
                engine: self.engine_id.clone(),
                message: e.to_string(),
            })
    }

    fn run(&mut self, sql: &str, timeout: Duration) -> Outcome {
        let deadline = Instant::now() + timeout;
        *self.deadline.lock().expect("deadline lock") = Some(deadline);
        let result = self.consume(sql);
        *self.deadline.lock().expect("deadline lock") = None;
        match result {
            Ok(n) => Outcome::Rows(n),
            Err(rusqlite::Error::SqliteFailure(e, _))
                if e.code == rusqlite::ErrorCode::OperationInterrupted
                    && Instant::now() >= deadline =>
            {
                Outcome::TimedOut
            }
            Err(e) => Outcome::Failed(e.to_string()),
        }
    }
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

/// Creates every catalog table in `conn` and loads the first `max_rows` rows of
/// each from `<table>.tbl` or `<table>.csv` in `dir`. Returns rows loaded per table.
pub fn restrict_dataset(
    conn: &mut Connection,
    catalog: &SchemaCatalog,
    dir: &Path,
    max_rows: u64,
) -> Result<Vec<(String, u64)>, HarnessError> {
    let load_error = |table: &str, message: String| HarnessError::Load {
        table: table.to_string(),
        message,
    };
    if max_rows == 0 {
        return Err(load_error("*", "row cap must be at least 1".into()));
    }
    let statements = render_create_statements(catalog, None, None)
        .map_err(|e| load_error("*", e.to_string()))?;
    let mut counts = Vec::new();
    for (table, create) in catalog.tables.iter().zip(statements) {
        let (path, delimiter) = table_file(dir, &table.name).ok_or_else(|| {
            load_error(
                &table.name,
                format!("no {0}.tbl or {0}.csv in {1}", table.name, dir.display()),
            )
        })?;
        let header: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
        let rows = read_table_rows(&path, delimiter, max_rows as usize, Some(&header))
            .map_err(|e| load_error(&table.name, e.to_string()))?;

        let tx = conn
            .transaction()
            .map_err(|e| load_error(&table.name, e.to_string()))?;
        tx.execute_batch(&format!(
            "DROP TABLE IF EXISTS {};\n{create}",
            quote(&table.name)
        ))
        .map_err(|e| load_error(&table.name, e.to_string()))?;
        {
            let placeholders = vec!["?"; header.len()].join(", ");
            let mut insert = tx
                .prepare(&format!(
                    "INSERT INTO {} VALUES ({placeholders})",
                    quote(&table.name)
                ))
                .map_err(|e| load_error(&table.name, e.to_string()))?;
            for (i, row) in rows.iter().enumerate() {
                if row.len() != header.len() {
                    return Err(load_error(
                        &table.name,
                        format!(
                            "record {} has {} fields, expected {}",
                            i + 1,
                            row.len(),
                            header.len()
                        ),
                    ));
                }
                insert
                    .execute(params_from_iter(row.iter()))
                    .map_err(|e| load_error(&table.name, e.to_string()))?;
            }
        }
        tx.commit()
            .map_err(|e| load_error(&table.name, e.to_string()))?;
        counts.push((table.name.clone(), rows.len() as u64));
    }
    Ok(counts)
}

/// Samples column values from a SQLite database.
pub struct SqliteSampler<'a> {
    conn: &'a Connection,
}

impl<'a> SqliteSampler<'a> {
    pub fn new(conn: &'a Connection) -> Self {
        SqliteSampler { conn }
    }
}

impl ValueSampler for SqliteSampler<'_> {
    fn sample(
        &mut self,
        table: &str,
        column: &str,
        limit: usize,
    ) -> Result<Vec<Option<String>>, SamplerError> {
        let backend = |e: rusqlite::Error| SamplerError::Backend(e.to_string());
        let mut stmt = self
            .conn
            .prepare(&format!(
                "SELECT CAST({} AS TEXT) FROM {} LIMIT ?",
                quote(column),
                quote(table)
            ))
            .map_err(backend)?;
        let values = stmt
            .query_map([limit as i64], |row| row.get::<_, Option<String>>(0))
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend)?;
        Ok(values)
    }
}
