//! Per-query complexity profiles, corpus coverage reports and the directives
//! that steer the next generation batch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechgen::ClauseTag;
use crate::schema::{ColumnFilter, SchemaCatalog};
use crate::sql::{analyze, parse_select, Issue, QueryTree, SyntaxError};
use crate::subschema::Subschema;

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("unresolved identifiers: {}", .0.join(", "))]
    UnknownObject(Vec<String>),
    #[error("no profiles to aggregate")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    pub join_count: u64,
    pub clause_counts: BTreeMap<String, u64>,
    pub operator_counts: BTreeMap<String, u64>,
    pub function_counts: BTreeMap<String, u64>,
    pub subselect_count: u64,
    pub referenced_tables: BTreeMap<String, u64>,
    pub referenced_columns: BTreeMap<String, u64>,
}

impl ComplexityProfile {
    /// Value of one of the four facets: joins, clauses, operators, functions.
    pub fn facet(&self, facet: Facet) -> u64 {
        match facet {
            Facet::Joins => self.join_count,
            Facet::Clauses => self.clause_counts.values().sum(),
            Facet::Operators => self.operator_counts.values().sum(),
            Facet::Functions => self.function_counts.values().sum(),
        }
    }

    pub fn has_clause(&self, clause: &str) -> bool {
        self.clause_counts.get(clause).is_some_and(|&n| n > 0)
    }
}

pub fn profile_query(
    sql: &str,
    catalog: &SchemaCatalog,
) -> Result<ComplexityProfile, CoverageError> {
    profile_tree(&parse_select(sql)?, catalog)
}

pub fn profile_tree(
    tree: &QueryTree,
    catalog: &SchemaCatalog,
) -> Result<ComplexityProfile, CoverageError> {
    let analysis = analyze(tree, catalog);
    let unresolved: Vec<String> = analysis
        .issues
        .iter()
        .filter_map(|issue| match issue {
            Issue::UnknownTable { name }
            | Issue::UnknownColumn { name }
            | Issue::AmbiguousColumn { name } => Some(name.clone()),
            _ => None,
        })
        .collect();
    if !unresolved.is_empty() {
        return Err(CoverageError::UnknownObject(unresolved));
    }
    let counts = analysis.counts;
    Ok(ComplexityProfile {
        join_count: counts.joins,
        clause_counts: counts.clauses,
        operator_counts: counts.operators,
        function_counts: counts.functions,
        subselect_count: counts.selects.saturating_sub(1),
        referenced_tables: analysis.tables,
        referenced_columns: analysis.columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Joins,
    Clauses,
    Operators,
    Functions,
}

impl Facet {
    pub const ALL: [Facet; 4] = [
        Facet::Joins,
        Facet::Clauses,
        Facet::Operators,
        Facet::Functions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Joins => "joins",
            Facet::Clauses => "clauses",
            Facet::Operators => "operators",
            Facet::Functions => "functions",
        }
    }
}

/// Population statistics of one facet over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl FacetStats {
    fn of(values: &[f64]) -> FacetStats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        FacetStats {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Reference statistics of one table or column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefStat {
    /// Total references across the corpus.
    pub count: u64,
    /// Fraction of queries referencing it at least once.
    pub query_freq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    TableUnderused,
    ColumnUnused,
    OperationUnderused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub kind: GapKind,
    pub subject: String,
    pub observed_freq: f64,
    pub target_freq: f64,
}

/// Minimum fraction of queries that should reference each object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageTargets {
    pub table_min_freq: f64,
    pub column_min_freq: f64,
    pub clause_min_freq: f64,
    pub clauses: Vec<ClauseTag>,
}

impl Default for CoverageTargets {
    fn default() -> Self {
        CoverageTargets {
            table_min_freq: 0.02,
            column_min_freq: 0.01,
            clause_min_freq: 0.10,
            clauses: PRESENCE_CLAUSES.to_vec(),
        }
    }
}

/// Clauses whose presence fraction is reported.
pub const PRESENCE_CLAUSES: [ClauseTag; 3] =
    [ClauseTag::GroupBy, ClauseTag::OrderBy, ClauseTag::Having];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Prompt setting label, or `mechanical`.
    pub setting: String,
    pub query_count: usize,
    pub facets: BTreeMap<Facet, FacetStats>,
    pub subselects: FacetStats,
    pub table_reference_freq: BTreeMap<String, RefStat>,
    pub column_reference_freq: BTreeMap<String, RefStat>,
    pub clause_presence_freq: BTreeMap<String, f64>,
    pub gap_list: Vec<CoverageGap>,
}

pub fn aggregate_coverage(
    profiles: &[ComplexityProfile],
    setting: &str,
    catalog: &SchemaCatalog,
    targets: &CoverageTargets,
) -> Result<CoverageReport, CoverageError> {
    if profiles.is_empty() {
        return Err(CoverageError::EmptyCorpus);
    }
    let n = profiles.len() as f64;
    let facets = Facet::ALL
        .iter()
        .map(|&f| {
            let values: Vec<f64> = profiles.iter().map(|p| p.facet(f) as f64).collect();
            (f, FacetStats::of(&values))
        })
        .collect();
    let subselects: Vec<f64> = profiles.iter().map(|p| p.subselect_count as f64).collect();

    let refs = |keys: Vec<String>, pick: fn(&ComplexityProfile) -> &BTreeMap<String, u64>| {
        keys.into_iter()
            .map(|key| {
                let mut stat = RefStat {
                    count: 0,
                    query_freq: 0.0,
                };
                let mut hits = 0usize;
                for p in profiles {
                    if let Some(&c) = pick(p).get(&key) {
                        stat.count += c;
                        hits += usize::from(c > 0);
                    }
                }
                stat.query_freq = hits as f64 / n;
                (key, stat)
            })
            .collect::<BTreeMap<_, _>>()
    };
    let table_reference_freq = refs(catalog.table_names(), |p| &p.referenced_tables);
    let column_reference_freq = refs(catalog.qualified_columns(), |p| &p.referenced_columns);

    let mut presence: BTreeSet<ClauseTag> = PRESENCE_CLAUSES.into_iter().collect();
    presence.extend(targets.clauses.iter().copied());
    let clause_presence_freq: BTreeMap<String, f64> = presence
        .iter()
        .map(|c| {
            let hits = profiles.iter().filter(|p| p.has_clause(c.as_str())).count();
            (c.as_str().to_string(), hits as f64 / n)
        })
        .collect();

    let mut gap_list = Vec::new();
    let mut push = |kind, subject: &str, observed: f64, target: f64| {
        if observed < target {
            gap_list.push(CoverageGap {
                kind,
                subject: subject.to_string(),
                observed_freq: observed,
                target_freq: target,
            });
        }
    };
    for (table, stat) in &table_reference_freq {
        push(
            GapKind::TableUnderused,
            table,
            stat.query_freq,
            targets.table_min_freq,
        );
    }
    for (column, stat) in &column_reference_freq {
        push(
            GapKind::ColumnUnused,
            column,
            stat.query_freq,
            targets.column_min_freq,
        );
    }
    for clause in &targets.clauses {
        let name = clause.as_str();
        push(
            GapKind::OperationUnderused,
            name,
            clause_presence_freq[name],
            targets.clause_min_freq,
        );
    }

    Ok(CoverageReport {
        setting: setting.to_string(),
        query_count: profiles.len(),
        facets,
        subselects: FacetStats::of(&subselects),
        table_reference_freq,
        column_reference_freq,
        clause_presence_freq,
        gap_list,
    })
}

/// Facet statistics of several reports as CSV: setting, facet, mean, std, min, max.
pub fn facet_csv(reports: &[CoverageReport]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["setting", "facet", "mean", "std", "min", "max"])
        .unwrap();
    for r in reports {
        let rows = r
            .facets
            .iter()
            .map(|(f, s)| (f.as_str(), s))
            .chain(std::iter::once(("subselects", &r.subselects)));
        for (facet, s) in rows {
            out.write_record([
                r.setting.clone(),
                facet.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.min.to_string(),
                s.max.to_string(),
            ])
            .unwrap();
        }
    }
    String::from_utf8(out.into_inner().unwrap()).unwrap()
}

/// How the next batch should be biased.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegenDirectives {
    /// Sampling weight per subschema id; uniform when empty.
    pub subschema_weights: BTreeMap<String, f64>,
    pub column_filters: ColumnFilter,
    pub bias_override: Option<ClauseTag>,
}

impl RegenDirectives {
    pub fn is_empty(&self) -> bool {
        self == &RegenDirectives::default()
    }
}

/// Turns gaps into directives:
/// - each underused table adds 1 to the weight of every subschema holding it
///   (base weight 1);
/// - unused columns become a column filter for their table, together with the
///   table's key columns so joins stay expressible;
/// - the operation gap with the largest shortfall sets the clause bias
///   (`having` maps to `group_by`).
pub fn plan_regeneration(
    report: &CoverageReport,
    subschemas: &[Subschema],
    catalog: &SchemaCatalog,
) -> RegenDirectives {
    let mut directives = RegenDirectives::default();
    let underused: BTreeSet<&str> = report
        .gap_list
        .iter()
        .filter(|g| g.kind == GapKind::TableUnderused)
        .map(|g| g.subject.as_str())
        .collect();
    if !underused.is_empty() {
        for s in subschemas {
            let hits = s
                .tables
                .iter()
                .filter(|t| underused.contains(t.as_str()))
                .count();
            directives
                .subschema_weights
                .insert(s.id.clone(), 1.0 + hits as f64);
        }
    }

    for gap in report
        .gap_list
        .iter()
        .filter(|g| g.kind == GapKind::ColumnUnused)
    {
        let Some((table, column)) = gap.subject.split_once('.') else {
            continue;
        };
        if catalog.column(table, column).is_some() {
            directives
                .column_filters
                .entry(table.to_string())
                .or_default()
                .push(column.to_string());
        }
    }
    for (table, columns) in directives.column_filters.iter_mut() {
        let Some(def) = catalog.table(table) else {
            continue;
        };
        let mut keys: BTreeSet<&str> = def.primary_key.iter().map(String::as_str).collect();
        for fk in &catalog.fk_edges {
            if &fk.from_table == table {
                keys.extend(fk.from_columns.iter().map(String::as_str));
            }
            if &fk.to_table == table {
                keys.extend(fk.to_columns.iter().map(String::as_str));
            }
        }
        columns.extend(keys.into_iter().map(str::to_string));
        // keep catalog column order
        let wanted: BTreeSet<String> = columns.drain(..).collect();
        columns.extend(
            def.columns
                .iter()
                .map(|c| c.name.clone())
                .filter(|c| wanted.contains(c)),
        );
    }

    let worst = report
        .gap_list
        .iter()
        .filter(|g| g.kind == GapKind::OperationUnderused)
        .filter_map(|g| {
            Some((
                ClauseTag::parse(&g.subject)?,
                g.target_freq - g.observed_freq,
            ))
        })
        .fold(
            None::<(ClauseTag, f64)>,
            |best, (tag, deficit)| match best {
                Some((_, d)) if d >= deficit => best,
                _ => Some((tag, deficit)),
            },
        );
    directives.bias_override = worst.map(|(tag, _)| match tag {
        ClauseTag::Having => ClauseTag::GroupBy,
        other => other,
    });
    directives
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ingest_ddl;

    fn catalog() -> SchemaCatalog {
        ingest_ddl(
            "CREATE TABLE t (a INT PRIMARY KEY, b INT);\
             CREATE TABLE part (p INT PRIMARY KEY, q INT, r INT)",
        )
        .unwrap()
    }

    fn profile(sql: &str) -> ComplexityProfile {
        profile_query(sql, &catalog()).unwrap()
    }

    #[test]
    fn single_profile_stats() {
        let p = ComplexityProfile {
            join_count: 2,
            ..Default::default()
        };
        let r = aggregate_coverage(&[p], "mechanical", &catalog(), &CoverageTargets::default())
            .unwrap();
        assert_eq!(
            r.facets[&Facet::Joins],
            FacetStats {
                mean: 2.0,
                std: 0.0,
                min: 2.0,
                max: 2.0
            }
        );
    }

    #[test]
    fn presence_and_gaps() {
        let ps = [
            profile("SELECT a FROM t GROUP BY a"),
            profile("SELECT a FROM t"),
        ];
        let r = aggregate_coverage(&ps, "x", &catalog(), &CoverageTargets::default()).unwrap();
        assert_eq!(r.clause_presence_freq["group_by"], 0.5);
        assert_eq!(r.table_reference_freq["t"].count, 2);
        assert_eq!(r.column_reference_freq["t.a"].count, 3);
        assert_eq!(r.column_reference_freq["part.q"].count, 0);
        let targets = CoverageTargets {
            table_min_freq: 0.05,
            ..CoverageTargets::default()
        };
        let r = aggregate_coverage(&ps, "x", &catalog(), &targets).unwrap();
        assert!(r.gap_list.contains(&CoverageGap {
            kind: GapKind::TableUnderused,
            subject: "part".into(),
            observed_freq: 0.0,
            target_freq: 0.05
        }));
        assert!(aggregate_coverage(&[], "x", &catalog(), &targets).is_err());
    }

    #[test]
    fn unresolved_is_an_error() {
        assert!(matches!(
            profile_query("SELECT zz FROM t", &catalog()),
            Err(CoverageError::UnknownObject(_))
        ));
    }

    #[test]
    fn directives() {
        let c = catalog();
        let subs = vec![
            Subschema {
                id: "s1".into(),
                tables: vec!["t".into()],
                spanning_joins: vec![],
            },
            Subschema {
                id: "s2".into(),
                tables: vec!["part".into()],
                spanning_joins: vec![],
            },
        ];
        let ps = [profile("SELECT a FROM t")];
        let mut r = aggregate_coverage(&ps, "x", &c, &CoverageTargets::default()).unwrap();
        let d = plan_regeneration(&r, &subs, &c);
        assert!(d.subschema_weights["s2"] > d.subschema_weights["s1"]);
        assert_eq!(d.column_filters["part"], vec!["p", "q", "r"]);
        assert_eq!(d.column_filters["t"], vec!["a", "b"]);
        assert_eq!(d.bias_override, Some(ClauseTag::GroupBy));

        r.gap_list.clear();
        assert!(plan_regeneration(&r, &subs, &c).is_empty());
        r.gap_list.push(CoverageGap {
            kind: GapKind::OperationUnderused,
            subject: "order_by".into(),
            observed_freq: 0.0,
            target_freq: 0.1,
        });
        assert_eq!(
            plan_regeneration(&r, &subs, &c).bias_override,
            Some(ClauseTag::OrderBy)
        );
    }

    #[test]
    fn csv_export() {
        let r = aggregate_coverage(
            &[profile("SELECT a FROM t")],
            "0-shot/none",
            &catalog(),
            &CoverageTargets::default(),
        )
        .unwrap();
        let text = facet_csv(&[r]);
        assert!(text.starts_with("setting,facet,mean,std,min,max\n"));
        assert!(text.contains("0-shot/none,joins,0,0,0,0"));
    }
}
