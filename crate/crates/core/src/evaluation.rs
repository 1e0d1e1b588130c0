//! Q-error statistics and prediction-driven routing over per-engine
//! predicted and measured runtimes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::RuntimeLabel;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("durations must be positive, got {0}")]
    Domain(f64),
    #[error("no queries to evaluate")]
    EmptyInput,
    #[error("missing value for query {query} on engine {engine}")]
    Incomplete { query: String, engine: String },
    #[error("duplicate value for query {query} on engine {engine}")]
    Duplicate { query: String, engine: String },
    #[error("routing results cover different queries")]
    Mismatch,
    #[error("{0}")]
    Parse(String),
}

pub fn q_error(pred: f64, truth: f64) -> Result<f64, EvalError> {
    for v in [pred, truth] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(EvalError::Domain(v));
        }
    }
    Ok((pred / truth).max(truth / pred))
}

/// One (query, engine) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub query_id: String,
    pub engine_id: String,
    pub predicted_ms: f64,
    pub true_ms: f64,
}

/// Predicted and true durations over queries x engines, both total.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub engines: Vec<String>,
    pub queries: Vec<String>,
    /// `pred[q][e]`.
    pub pred: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    /// Builds a matrix; queries and engines keep first-appearance order.
    pub fn from_rows(rows: &[PredictionRow]) -> Result<Self, EvalError> {
        let mut engines: Vec<String> = Vec::new();
        let mut queries: Vec<String> = Vec::new();
        let mut cells: HashMap<(&str, &str), (f64, f64)> = HashMap::new();
        for r in rows {
            for v in [r.predicted_ms, r.true_ms] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(EvalError::Domain(v));
                }
            }
            if !engines.contains(&r.engine_id) {
                engines.push(r.engine_id.clone());
            }
            if !queries.contains(&r.query_id) {
                queries.push(r.query_id.clone());
            }
            if cells
                .insert((&r.query_id, &r.engine_id), (r.predicted_ms, r.true_ms))
                .is_some()
            {
                return Err(EvalError::Duplicate {
                    query: r.query_id.clone(),
                    engine: r.engine_id.clone(),
                });
            }
        }
        let mut pred = Vec::with_capacity(queries.len());
        let mut truth = Vec::with_capacity(queries.len());
        for q in &queries {
            let mut p_row = Vec::with_capacity(engines.len());
            let mut t_row = Vec::with_capacity(engines.len());
            for e in &engines {
                let &(p, t) =
                    cells
                        .get(&(q.as_str(), e.as_str()))
                        .ok_or_else(|| EvalError::Incomplete {
                            query: q.clone(),
                            engine: e.clone(),
                        })?;
                p_row.push(p);
                t_row.push(t);
            }
            pred.push(p_row);
            truth.push(t_row);
        }
        Ok(PredictionMatrix {
            engines,
            queries,
            pred,
            truth,
        })
    }

    /// Reads `query_id,engine_id,predicted_ms,true_ms` CSV, or JSONL rows with
    /// the same fields when the extension is `.jsonl`.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let parse = |e: String| EvalError::Parse(format!("{}: {e}", path.display()));
        let rows: Vec<PredictionRow> = if path.extension().and_then(|e| e.to_str()) == Some("jsonl")
        {
            let text = std::fs::read_to_string(path).map_err(|e| parse(e.to_string()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| parse(e.to_string())))
                .collect::<Result<_, _>>()?
        } else {
            csv::Reader::from_path(path)
                .map_err(|e| parse(e.to_string()))?
                .deserialize()
                .collect::<Result<_, _>>()
                .map_err(|e| parse(e.to_string()))?
        };
        Self::from_rows(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QStats {
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QErrorSummary {
    pub q_median: f64,
    pub q_mean: f64,
    pub q_p95: f64,
    pub per_engine: BTreeMap<String, QStats>,
}

/// Mean written as an offset from the minimum, so a multiset of equal values
/// averages to exactly that value.
fn mean(values: &[f64]) -> f64 {
    let base = values.iter().copied().fold(f64::INFINITY, f64::min);
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Linear interpolation between closest ranks on sorted `values`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-engine median, mean and 95th percentile of the q-errors, then the
/// arithmetic mean of each over engines.
pub fn summarize(matrix: &PredictionMatrix) -> Result<QErrorSummary, EvalError> {
    if matrix.queries.is_empty() || matrix.engines.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut per_engine = BTreeMap::new();
    let mut stats = Vec::with_capacity(matrix.engines.len());
    for (e, engine) in matrix.engines.iter().enumerate() {
        let mut errors = matrix
            .pred
            .iter()
            .zip(&matrix.truth)
            .map(|(p, t)| q_error(p[e], t[e]))
            .collect::<Result<Vec<_>, _>>()?;
        errors.sort_by(f64::total_cmp);
        let s = QStats {
            median: percentile(&errors, 0.5),
            mean: mean(&errors),
            p95: percentile(&errors, 0.95),
        };
        per_engine.insert(engine.clone(), s);
        stats.push(s);
    }
    let over = |f: fn(&QStats) -> f64| mean(&stats.iter().map(f).collect::<Vec<_>>());
    Ok(QErrorSummary {
        q_median: over(|s| s.median),
        q_mean: over(|s| s.mean),
        q_p95: over(|s| s.p95),
        per_engine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingResult {
    pub assignments: BTreeMap<String, String>,
    pub total_routed_time: f64,
    pub oracle_time: f64,
    pub regret: f64,
}

/// Sends each query to the engine with the lowest prediction; ties go to the
/// engine listed first.
pub fn route(matrix: &PredictionMatrix) -> RoutingResult {
    let mut assignments = BTreeMap::new();
    let mut total = 0.0;
    let mut oracle = 0.0;
    for (q, query) in matrix.queries.iter().enumerate() {
        let preds = &matrix.pred[q];
        let mut best = 0;
        for e in 1..preds.len() {
            if preds[e] < preds[best] {
                best = e;
            }
        }
        assignments.insert(query.clone(), matrix.engines[best].clone());
        total += matrix.truth[q][best];
        oracle += matrix.truth[q]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
    }
    RoutingResult {
        assignments,
        total_routed_time: total,
        oracle_time: oracle,
        regret: (total - oracle).max(0.0),
    }
}

/// Relative time saved by `b` over `a`: `(a - b) / a`.
pub fn compare_routing(a: &RoutingResult, b: &RoutingResult) -> Result<f64, EvalError> {
    let qa: BTreeSet<&String> = a.assignments.keys().collect();
    let qb: BTreeSet<&String> = b.assignments.keys().collect();
    if qa != qb {
        return Err(EvalError::Mismatch);
    }
    if a.total_routed_time.is_nan() || a.total_routed_time <= 0.0 {
        return Err(EvalError::Domain(a.total_routed_time));
    }
    Ok((a.total_routed_time - b.total_routed_time) / a.total_routed_time)
}

/// What to do with timed-out labels when building true durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorPolicy {
    /// Use the timeout as the true duration.
    #[default]
    UseTimeout,
    Exclude,
}

/// True durations keyed by (query, engine). Errored labels are skipped.
pub fn truths_from_labels(
    labels: &[RuntimeLabel],
    policy: CensorPolicy,
) -> BTreeMap<(String, String), f64> {
    labels
        .iter()
        .filter(|l| l.error.is_none())
        .filter(|l| !(l.timed_out && policy == CensorPolicy::Exclude))
        .map(|l| ((l.query_id.clone(), l.engine_id.clone()), l.runtime_ms))
        .collect()
}

/// Text tables: one row per prediction source with the three aggregates,
/// then one row per source with the per-engine medians, means and p95s.
pub fn summary_table(sources: &[(String, QErrorSummary)]) -> String {
    let width = sources
        .iter()
        .map(|(s, _)| s.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}",
        "source", "q_median", "q_mean", "q_p95"
    );
    for (name, s) in sources {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>9.4}  {:>9.4}  {:>9.4}",
            s.q_median, s.q_mean, s.q_p95
        );
    }
    let engines: BTreeSet<&String> = sources
        .iter()
        .flat_map(|(_, s)| s.per_engine.keys())
        .collect();
    if engines.len() > 1 {
        out.push('\n');
        let _ = write!(out, "{:<width$}  {:<8}", "source", "stat");
        for e in &engines {
            let _ = write!(out, "  {e:>12}");
        }
        out.push('\n');
        for (name, s) in sources {
            for (stat, pick) in [
                ("median", (|q: &QStats| q.median) as fn(&QStats) -> f64),
                ("mean", |q| q.mean),
                ("p95", |q| q.p95),
            ] {
                let _ = write!(out, "{name:<width$}  {stat:<8}");
                for e in &engines {
                    match s.per_engine.get(*e) {
                        Some(q) => {
                            let _ = write!(out, "  {:>12.4}", pick(q));
                        }
                        None => {
                            let _ = write!(out, "  {:>12}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(engines: &[&str], pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PredictionMatrix {
        PredictionMatrix {
            engines: engines.iter().map(|e| e.to_string()).collect(),
            queries: (0..pred.len()).map(|q| format!("q{q}")).collect(),
            pred,
            truth,
        }
    }

    #[test]
    fn q_error_cases() {
        assert_eq!(q_error(5.0, 5.0), Ok(1.0));
        assert_eq!(q_error(2.0, 1.0), Ok(2.0));
        assert_eq!(q_error(1.0, 2.0), Ok(2.0));
        assert_eq!(q_error(0.0, 1.0), Err(EvalError::Domain(0.0)));
        assert!(q_error(1.0, -3.0).is_err());
    }

    #[test]
    fn one_engine_summary() {
        let m = matrix(
            &["e"],
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![1.0]; 3],
        );
        let s = summarize(&m).unwrap();
        assert_eq!(s.q_median, 2.0);
        assert_eq!(s.q_mean, 2.0);
        assert!((s.q_p95 - 2.9).abs() < 1e-12);
    }

    #[test]
    fn mean_over_engines() {
        // per-engine medians 1.1 and 1.3
        let m = matrix(&["a", "b"], vec![vec![1.1, 1.3]], vec![vec![1.0, 1.0]]);
        let s = summarize(&m).unwrap();
        assert!((s.q_median - 1.2).abs() < 1e-12);
        assert_eq!(
            summarize(&matrix(&["a"], vec![], vec![])),
            Err(EvalError::EmptyInput)
        );
    }

    #[test]
    fn even_median() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    #[test]
    fn routing() {
        let m = matrix(&["e1", "e2"], vec![vec![3.0, 5.0]], vec![vec![4.0, 2.0]]);
        let r = route(&m);
        assert_eq!(r.assignments["q0"], "e1");
        assert_eq!(
            (r.total_routed_time, r.oracle_time, r.regret),
            (4.0, 2.0, 2.0)
        );
        let tie = matrix(&["e1", "e2"], vec![vec![1.0, 1.0]], vec![vec![4.0, 2.0]]);
        assert_eq!(route(&tie).assignments["q0"], "e1");
        let perfect = matrix(&["e1", "e2"], vec![vec![4.0, 2.0]], vec![vec![4.0, 2.0]]);
        assert_eq!(route(&perfect).regret, 0.0);
    }

    fn total(t: f64) -> RoutingResult {
        RoutingResult {
            assignments: [("q".to_string(), "e".to_string())].into(),
            total_routed_time: t,
            oracle_time: t,
            regret: 0.0,
        }
    }

    #[test]
    fn compare() {
        assert!((compare_routing(&total(165.0), &total(150.0)).unwrap() - 0.0909).abs() < 1e-4);
        assert_eq!(compare_routing(&total(10.0), &total(10.0)), Ok(0.0));
        assert!(compare_routing(&total(10.0), &total(12.0)).unwrap() < 0.0);
        let mut other = total(1.0);
        other.assignments = [("z".to_string(), "e".to_string())].into();
        assert_eq!(
            compare_routing(&total(1.0), &other),
            Err(EvalError::Mismatch)
        );
    }

    #[test]
    fn rows_and_files() {
        let rows = vec![
            PredictionRow {
                query_id: "q1".into(),
                engine_id: "a".into(),
                predicted_ms: 2.0,
                true_ms: 1.0,
            },
            PredictionRow {
                query_id: "q1".into(),
                engine_id: "b".into(),
                predicted_ms: 1.0,
                true_ms: 1.0,
            },
        ];
        let m = PredictionMatrix::from_rows(&rows).unwrap();
        assert_eq!(m.engines, vec!["a", "b"]);
        let mut missing = rows.clone();
        missing.push(PredictionRow {
            query_id: "q2".into(),
            engine_id: "a".into(),
            predicted_ms: 1.0,
            true_ms: 1.0,
        });
        assert!(matches!(
            PredictionMatrix::from_rows(&missing),
            Err(EvalError::Incomplete { .. })
        ));
        let mut zero = rows.clone();
        zero[0].true_ms = 0.0;
        assert_eq!(
            PredictionMatrix::from_rows(&zero),
            Err(EvalError::Domain(0.0))
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "query_id,engine_id,predicted_ms,true_ms\nq1,a,2,1\nq1,b,1,1\n",
        )
        .unwrap();
        assert_eq!(PredictionMatrix::load(&path).unwrap(), m);
        let table = summary_table(&[("lcm".into(), summarize(&m).unwrap())]);
        assert!(table.contains("q_median"));
        assert!(table.contains("lcm"));
    }

    #[test]
    fn censoring() {
        let label = |q: &str, timed_out: bool, error: Option<&str>| RuntimeLabel {
            query_id: q.into(),
            engine_id: "e".into(),
            runtime_ms: 600_000.0,
            row_count: None,
            timed_out,
            error: error.map(str::to_string),
        };
        let labels = [label("a", true, None), label("b", false, Some("boom"))];
        assert_eq!(
            truths_from_labels(&labels, CensorPolicy::UseTimeout).len(),
            1
        );
        assert!(truths_from_labels(&labels, CensorPolicy::Exclude).is_empty());
    }
}
