//! Query execution against one or more engines: runtime labels, timeouts,
//! retention and runtime buckets.

mod presto;
mod sqlite;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use presto::{PrestoConfig, PrestoDriver};
pub use sqlite::{restrict_dataset, SqliteDriver, SqliteSampler};

/// Ten minutes.
pub const DEFAULT_TIMEOUT_MS: u64 = 600_000;
/// Empty results faster than this are dropped by [`apply_retention`].
pub const DEFAULT_MIN_EMPTY_RUNTIME_MS: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot reach engine {engine}: {message}")]
    Connection { engine: String, message: String },
    #[error("failed to load table {table}: {message}")]
    Load { table: String, message: String },
    #[error("invalid harness configuration: {0}")]
    Config(String),
}

/// How to reach an engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverSpec {
    /// Embedded SQLite. `database` is a file path or absent for an in-memory
    /// database; `data_dir` tables are loaded at startup, capped at `max_rows`.
    Sqlite {
        #[serde(default)]
        database: Option<PathBuf>,
        #[serde(default)]
        data_dir: Option<PathBuf>,
        #[serde(default = "default_max_rows")]
        max_rows: u64,
    },
    /// Presto/Trino HTTP client protocol.
    Presto(PrestoConfig),
}

fn default_max_rows() -> u64 {
    40_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSpec {
    pub engine_id: String,
    pub driver: DriverSpec,
    #[serde(default = "one")]
    pub worker_count: u32,
}

fn one() -> u32 {
    1
}

/// Result of running one statement on a driver.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Rows(u64),
    TimedOut,
    Failed(String),
}

/// A connection to one engine. Drivers run one statement at a time.
pub trait Driver: Send {
    fn engine_id(&self) -> &str;
    /// Cheap reachability probe run before a batch.
    fn check(&mut self) -> Result<(), HarnessError>;
    /// Runs `sql`, consuming every result row, cancelling at `timeout`.
    fn run(&mut self, sql: &str, timeout: Duration) -> Outcome;
}

/// Measured execution of one query on one engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeLabel {
    pub query_id: String,
    pub engine_id: String,
    pub runtime_ms: f64,
    pub row_count: Option<u64>,
    pub timed_out: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeBucket {
    Lt1s,
    S1To1m,
    M1To5m,
    Gt5m,
}

impl RuntimeBucket {
    pub const ALL: [RuntimeBucket; 4] = [
        RuntimeBucket::Lt1s,
        RuntimeBucket::S1To1m,
        RuntimeBucket::M1To5m,
        RuntimeBucket::Gt5m,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RuntimeBucket::Lt1s => "lt_1s",
            RuntimeBucket::S1To1m => "s1_to_1m",
            RuntimeBucket::M1To5m => "m1_to_5m",
            RuntimeBucket::Gt5m => "gt_5m",
        }
    }
}

/// `[0,1s)`, `[1s,1m)`, `[1m,5m)`, `[5m,∞)`.
pub fn bucket_ms(runtime_ms: f64) -> RuntimeBucket {
    if runtime_ms < 1_000.0 {
        RuntimeBucket::Lt1s
    } else if runtime_ms < 60_000.0 {
        RuntimeBucket::S1To1m
    } else if runtime_ms < 300_000.0 {
        RuntimeBucket::M1To5m
    } else {
        RuntimeBucket::Gt5m
    }
}

pub fn bucket_runtime(label: &RuntimeLabel) -> RuntimeBucket {
    bucket_ms(label.runtime_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Errored,
    EmptyAndFast,
}

/// Drops errored labels and empty results that finished in under
/// `min_empty_runtime_ms`. Timed-out labels have no row count and are kept.
pub fn apply_retention(
    labels: Vec<RuntimeLabel>,
    min_empty_runtime_ms: f64,
) -> (Vec<RuntimeLabel>, Vec<(RuntimeLabel, DropReason)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for label in labels {
        if label.error.is_some() {
            dropped.push((label, DropReason::Errored));
        } else if label.row_count == Some(0) && label.runtime_ms < min_empty_runtime_ms {
            dropped.push((label, DropReason::EmptyAndFast));
        } else {
            kept.push(label);
        }
    }
    (kept, dropped)
}

/// Runs each `(query_id, sql)` serially on `driver`. Per-query failures become
/// labels; only an unreachable engine fails the batch.
pub fn execute_batch(
    queries: &[(String, String)],
    driver: &mut dyn Driver,
    timeout: Duration,
) -> Result<Vec<RuntimeLabel>, HarnessError> {
    if timeout.is_zero() {
        return Err(HarnessError::Config("timeout must be positive".into()));
    }
    driver.check()?;
    let engine_id = driver.engine_id().to_string();
    let mut labels = Vec::with_capacity(queries.len());
    for (query_id, sql) in queries {
        let start = Instant::now();
        let outcome = driver.run(sql, timeout);
        let elapsed = start.elapsed().as_secs_f64() * 1_000.0;
        let mut label = RuntimeLabel {
            query_id: query_id.clone(),
            engine_id: engine_id.clone(),
            runtime_ms: elapsed,
            row_count: None,
            timed_out: false,
            error: None,
        };
        match outcome {
            Outcome::Rows(n) => label.row_count = Some(n),
            Outcome::TimedOut => {
                label.timed_out = true;
                label.runtime_ms = timeout.as_secs_f64() * 1_000.0;
            }
            Outcome::Failed(message) => label.error = Some(message),
        }
        labels.push(label);
    }
    Ok(labels)
}

/// One worker thread per engine, serial within each engine. Labels come back
/// grouped by engine in `drivers` order.
pub fn execute_on_engines(
    queries: &[(String, String)],
    drivers: &mut [Box<dyn Driver>],
    timeout: Duration,
) -> Vec<Result<Vec<RuntimeLabel>, HarnessError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = drivers
            .iter_mut()
            .map(|driver| scope.spawn(move || execute_batch(queries, driver.as_mut(), timeout)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("engine worker panicked"))
            .collect()
    })
}

/// Opens a driver for `spec`; SQLite engines get their data loaded here.
pub fn open_driver(
    spec: &EngineSpec,
    catalog: &crate::schema::SchemaCatalog,
) -> Result<Box<dyn Driver>, HarnessError> {
    match &spec.driver {
        DriverSpec::Sqlite {
            database,
            data_dir,
            max_rows,
        } => {
            let mut driver = match database {
                Some(path) => SqliteDriver::open(&spec.engine_id, path)?,
                None => SqliteDriver::open_in_memory(&spec.engine_id)?,
            };
            if let Some(dir) = data_dir {
                restrict_dataset(driver.connection_mut(), catalog, dir, *max_rows)?;
            }
            Ok(Box::new(driver))
        }
        DriverSpec::Presto(config) => {
            Ok(Box::new(PrestoDriver::new(&spec.engine_id, config.clone())))
        }
    }
}

/// The data file for `table` in `dir`: `<table>.tbl` (pipe-delimited) or
/// `<table>.csv`.
pub fn table_file(dir: &Path, table: &str) -> Option<(PathBuf, u8)> {
    [("tbl", b'|'), ("csv", b',')]
        .into_iter()
        .map(|(ext, delimiter)| (dir.join(format!("{table}.{ext}")), delimiter))
        .find(|(path, _)| path.is_file())
}

/// Reads at most `limit` records. Empty fields are NULL; the trailing
/// delimiter of `.tbl` rows is ignored. A first record equal to `header`
/// (case-insensitive) is skipped.
pub fn read_table_rows(
    path: &Path,
    delimiter: u8,
    limit: usize,
    header: Option<&[String]>,
) -> Result<Vec<Vec<Option<String>>>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .quoting(delimiter != b'|')
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i == 0 {
            if let Some(names) = header {
                let matches = record.len() >= names.len()
                    && names
                        .iter()
                        .zip(record.iter())
                        .all(|(n, f)| n.eq_ignore_ascii_case(f.trim()));
                if matches {
                    continue;
                }
            }
        }
        if rows.len() >= limit {
            break;
        }
        let mut fields: Vec<Option<String>> = record
            .iter()
            .map(|f| (!f.is_empty()).then(|| f.to_string()))
            .collect();
        if delimiter == b'|' && fields.last() == Some(&None) {
            fields.pop();
        }
        rows.push(fields);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(runtime_ms: f64, row_count: Option<u64>, error: Option<&str>) -> RuntimeLabel {
        RuntimeLabel {
            query_id: "q".into(),
            engine_id: "e".into(),
            runtime_ms,
            row_count,
            timed_out: false,
            error: error.map(str::to_string),
        }
    }

    #[test]
    fn bucket_boundaries() {
        let cases = [
            (0.0, RuntimeBucket::Lt1s),
            (500.0, RuntimeBucket::Lt1s),
            (999.0, RuntimeBucket::Lt1s),
            (1_000.0, RuntimeBucket::S1To1m),
            (59_999.0, RuntimeBucket::S1To1m),
            (60_000.0, RuntimeBucket::M1To5m),
            (299_999.0, RuntimeBucket::M1To5m),
            (300_000.0, RuntimeBucket::Gt5m),
            (600_000.0, RuntimeBucket::Gt5m),
        ];
        for (ms, bucket) in cases {
            assert_eq!(bucket_ms(ms), bucket, "{ms}");
        }
    }

    #[test]
    fn retention_rules() {
        let labels = vec![
            label(3_000.0, Some(0), None),
            label(12_000.0, Some(0), None),
            label(100.0, Some(500), None),
            label(5.0, None, Some("no such column")),
        ];
        let (kept, dropped) = apply_retention(labels, DEFAULT_MIN_EMPTY_RUNTIME_MS);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].runtime_ms, 12_000.0);
        assert_eq!(dropped[0].1, DropReason::EmptyAndFast);
        assert_eq!(dropped[1].1, DropReason::Errored);
    }

    struct Scripted(Vec<Outcome>);

    impl Driver for Scripted {
        fn engine_id(&self) -> &str {
            "scripted"
        }
        fn check(&mut self) -> Result<(), HarnessError> {
            Ok(())
        }
        fn run(&mut self, _sql: &str, _timeout: Duration) -> Outcome {
            self.0.remove(0)
        }
    }

    #[test]
    fn batch_maps_outcomes() {
        let mut driver = Scripted(vec![
            Outcome::Rows(3),
            Outcome::TimedOut,
            Outcome::Failed("boom".into()),
        ]);
        let queries: Vec<(String, String)> = (0..3)
            .map(|i| (format!("q{i}"), "SELECT 1".to_string()))
            .collect();
        let labels = execute_batch(&queries, &mut driver, Duration::from_millis(250)).unwrap();
        assert_eq!(labels[0].row_count, Some(3));
        assert!(labels[1].timed_out);
        assert_eq!(labels[1].runtime_ms, 250.0);
        assert_eq!(labels[1].row_count, None);
        assert_eq!(labels[2].error.as_deref(), Some("boom"));
        assert_eq!(labels[2].row_count, None);
    }

    #[test]
    fn reads_tbl_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.tbl"), "1|x||\n2|y|z|\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "k,v\n1,\"p,q\"\n").unwrap();
        let (path, d) = table_file(dir.path(), "a").unwrap();
        assert_eq!(d, b'|');
        let rows = read_table_rows(&path, d, 10, None).unwrap();
        assert_eq!(rows[0], vec![Some("1".into()), Some("x".into()), None]);
        assert_eq!(rows[1].len(), 3);
        let (path, d) = table_file(dir.path(), "b").unwrap();
        let header = vec!["k".to_string(), "v".to_string()];
        let rows = read_table_rows(&path, d, 10, Some(&header)).unwrap();
        assert_eq!(rows, vec![vec![Some("1".into()), Some("p,q".into())]]);
        assert!(table_file(dir.path(), "c").is_none());
    }
}
