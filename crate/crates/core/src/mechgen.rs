//! Pseudo-random query construction over a subschema, and seed-example
//! sampling for few-shot prompts.
//!
//! Every stochastic choice draws from a ChaCha8 stream seeded by
//! `SHA-256(seed, "mechanical", subschema id)`, so output is identical on
//! every platform.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::QueryRecord;
use crate::rng::{stage_rng, StageRng};
use crate::schema::{ColumnDef, SchemaCatalog, SqlType};
use crate::subschema::Subschema;

#[derive(Debug, Error, PartialEq)]
pub enum MechError {
    #[error("invalid mechanical config: {0}")]
    InvalidConfig(String),
    #[error("unknown object: {0}")]
    UnknownObject(String),
    #[error("requested {requested} examples from a pool of {available}")]
    InsufficientPool { requested: usize, available: usize },
}

/// Clause kinds a query can be tagged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseTag {
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
}

impl ClauseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ClauseTag::Where => "where",
            ClauseTag::GroupBy => "group_by",
            ClauseTag::Having => "having",
            ClauseTag::OrderBy => "order_by",
            ClauseTag::Limit => "limit",
        }
    }

    pub fn parse(name: &str) -> Option<ClauseTag> {
        [
            ClauseTag::Where,
            ClauseTag::GroupBy,
            ClauseTag::Having,
            ClauseTag::OrderBy,
            ClauseTag::Limit,
        ]
        .into_iter()
        .find(|t| t.as_str() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregate {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl Aggregate {
    fn sql(self) -> &'static str {
        match self {
            Aggregate::Count => "COUNT",
            Aggregate::Sum => "SUM",
            Aggregate::Avg => "AVG",
            Aggregate::Min => "MIN",
            Aggregate::Max => "MAX",
        }
    }
}

/// Knobs for the mechanical generator. `p_having` is conditional on the
/// query being grouped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechConfig {
    pub seed: u64,
    pub p_where: f64,
    pub max_predicates: usize,
    pub p_group_by: f64,
    pub p_having: f64,
    pub p_order_by: f64,
    pub p_aggregate: f64,
    pub aggregate_functions: Vec<Aggregate>,
    pub projection_count_range: (usize, usize),
}

impl Default for MechConfig {
    fn default() -> Self {
        MechConfig {
            seed: 0,
            p_where: 0.7,
            max_predicates: 3,
            p_group_by: 0.5,
            p_having: 0.3,
            p_order_by: 0.5,
            p_aggregate: 0.5,
            aggregate_functions: vec![
                Aggregate::Count,
                Aggregate::Sum,
                Aggregate::Avg,
                Aggregate::Min,
                Aggregate::Max,
            ],
            projection_count_range: (1, 4),
        }
    }
}

impl MechConfig {
    pub fn validate(&self) -> Result<(), MechError> {
        let probabilities = [
            ("p_where", self.p_where),
            ("p_group_by", self.p_group_by),
            ("p_having", self.p_having),
            ("p_order_by", self.p_order_by),
            ("p_aggregate", self.p_aggregate),
        ];
        for (name, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(MechError::InvalidConfig(format!(
                    "{name} = {p} is outside [0, 1]"
                )));
            }
        }
        if self.p_having > 0.0 && self.p_group_by == 0.0 {
            return Err(MechError::InvalidConfig(
                "p_having > 0 needs p_group_by > 0".into(),
            ));
        }
        let (lo, hi) = self.projection_count_range;
        if lo == 0 || lo > hi {
            return Err(MechError::InvalidConfig(format!(
                "projection_count_range ({lo}, {hi}) is empty"
            )));
        }
        if self.max_predicates == 0 && self.p_where > 0.0 {
            return Err(MechError::InvalidConfig(
                "p_where > 0 needs max_predicates >= 1".into(),
            ));
        }
        if self.aggregate_functions.is_empty() && self.p_aggregate > 0.0 {
            return Err(MechError::InvalidConfig(
                "p_aggregate > 0 needs aggregate_functions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Col<'a> {
    table: &'a str,
    def: &'a ColumnDef,
}

impl Col<'_> {
    fn sql(&self) -> String {
        format!("{}.{}", self.table, self.def.name)
    }
}

fn quote(text: &str) -> String {
    format!("'{}'", text.replace('\'', "''"))
}

/// Days since 1970-01-01 for a `YYYY-MM-DD` prefix.
fn parse_date(text: &str) -> Option<i64> {
    let mut parts = text.get(..10)?.split('-');
    let y: i64 = parts.next()?.parse().ok()?;
    let m: i64 = parts.next()?.parse().ok()?;
    let d: i64 = parts.next()?.parse().ok()?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146_097 + doe - 719_468)
}

const DEFAULT_NUMERIC_RANGE: (f64, f64) = (0.0, 1000.0);
// 1992-01-01 .. 1998-12-31
const DEFAULT_DATE_RANGE: (i64, i64) = (8035, 10_591);
const PLACEHOLDER_TEXT: &str = "N/A";

struct Builder<'a> {
    columns: Vec<Col<'a>>,
    config: &'a MechConfig,
    from: String,
}

/// `n` queries joining every subschema table along its spanning joins.
pub fn generate_mechanical(
    subschema: &Subschema,
    catalog: &SchemaCatalog,
    config: &MechConfig,
    n: usize,
) -> Result<Vec<QueryRecord>, MechError> {
    config.validate()?;
    if n == 0 {
        return Err(MechError::InvalidConfig("n must be at least 1".into()));
    }
    let builder = Builder::new(subschema, catalog, config)?;
    let mut rng = stage_rng(config.seed, &["mechanical", &subschema.id]);
    Ok((0..n)
        .map(|_| QueryRecord::mechanical(builder.query(&mut rng), &subschema.id, 0))
        .collect())
}

impl<'a> Builder<'a> {
    fn new(
        subschema: &'a Subschema,
        catalog: &'a SchemaCatalog,
        config: &'a MechConfig,
    ) -> Result<Self, MechError> {
        let mut columns = Vec::new();
        for name in &subschema.tables {
            let table = catalog
                .table(name)
                .ok_or_else(|| MechError::UnknownObject(format!("table {name}")))?;
            columns.extend(table.columns.iter().map(|def| Col {
                table: &table.name,
                def,
            }));
        }
        if columns.is_empty() {
            return Err(MechError::UnknownObject(format!(
                "subschema {} has no columns",
                subschema.id
            )));
        }
        Ok(Builder {
            columns,
            config,
            from: from_clause(subschema, catalog)?,
        })
    }

    fn query(&self, rng: &mut StageRng) -> String {
        let c = self.config;
        let (lo, hi) = c.projection_count_range;
        let k = rng.gen_range(lo..=hi).min(self.columns.len());
        let grouped = rng.gen_bool(c.p_group_by);
        let aggregated = rng.gen_bool(c.p_aggregate);

        let mut select = Vec::new();
        let mut group_by = Vec::new();
        if grouped {
            group_by = self.pick_columns(rng, k).iter().map(Col::sql).collect();
            select = group_by.clone();
            if aggregated {
                select.push(self.aggregate(rng));
            }
        } else if aggregated {
            select.extend((0..k).map(|_| self.aggregate(rng)));
        } else {
            select.extend(self.pick_columns(rng, k).iter().map(Col::sql));
        }

        let mut sql = format!("SELECT {} FROM {}", select.join(", "), self.from);
        if rng.gen_bool(c.p_where) {
            let m = rng.gen_range(1..=c.max_predicates).min(self.columns.len());
            let predicates: Vec<String> = self
                .pick_columns(rng, m)
                .into_iter()
                .map(|col| predicate(rng, col))
                .collect();
            sql.push_str(" WHERE ");
            sql.push_str(&predicates.join(" AND "));
        }
        if grouped {
            sql.push_str(" GROUP BY ");
            sql.push_str(&group_by.join(", "));
            if rng.gen_bool(c.p_having) {
                sql.push_str(&format!(" HAVING COUNT(*) > {}", rng.gen_range(0..=3)));
            }
        }
        if rng.gen_bool(c.p_order_by) {
            let m = rng.gen_range(1..=select.len().min(2));
            let keys: Vec<String> = sample(rng, select.len(), m)
                .into_iter()
                .map(|i| {
                    let desc = if rng.gen_bool(0.5) { " DESC" } else { "" };
                    format!("{}{desc}", select[i])
                })
                .collect();
            sql.push_str(" ORDER BY ");
            sql.push_str(&keys.join(", "));
        }
        sql
    }

    fn pick_columns(&self, rng: &mut StageRng, k: usize) -> Vec<Col<'a>> {
        let mut picked: Vec<usize> = sample(rng, self.columns.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| self.columns[i]).collect()
    }

    fn aggregate(&self, rng: &mut StageRng) -> String {
        let funcs = &self.config.aggregate_functions;
        let f = funcs[rng.gen_range(0..funcs.len())];
        let candidates: Vec<&Col> = match f {
            Aggregate::Sum | Aggregate::Avg => self
                .columns
                .iter()
                .filter(|c| c.def.supports_arithmetic())
                .collect(),
            Aggregate::Count if rng.gen_bool(0.5) => Vec::new(),
            _ => self.columns.iter().collect(),
        };
        if candidates.is_empty() {
            return "COUNT(*)".into();
        }
        let col = candidates[rng.gen_range(0..candidates.len())];
        format!("{}({})", f.sql(), col.sql())
    }
}

/// FROM clause: the first table, then one INNER JOIN per spanning join in an
/// order where each join attaches a new table to the ones already placed.
fn from_clause(subschema: &Subschema, catalog: &SchemaCatalog) -> Result<String, MechError> {
    let Some(first) = subschema.tables.first() else {
        return Err(MechError::UnknownObject("empty subschema".into()));
    };
    if subschema.spanning_joins.len() + 1 != subschema.tables.len() {
        return Err(MechError::UnknownObject(format!(
            "subschema {} has {} tables but {} spanning joins",
            subschema.id,
            subschema.tables.len(),
            subschema.spanning_joins.len()
        )));
    }
    for fk in &subschema.spanning_joins {
        if fk.from_columns.is_empty() || fk.from_columns.len() != fk.to_columns.len() {
            return Err(MechError::UnknownObject(format!(
                "join {fk} has no usable columns"
            )));
        }
        let pairs = fk
            .from_columns
            .iter()
            .map(|c| (&fk.from_table, c))
            .chain(fk.to_columns.iter().map(|c| (&fk.to_table, c)));
        for (table, column) in pairs {
            if catalog.column(table, column).is_none() {
                return Err(MechError::UnknownObject(format!("column {table}.{column}")));
            }
        }
    }

    let mut placed = vec![first.as_str()];
    let mut pending: Vec<_> = subschema.spanning_joins.iter().collect();
    let mut sql = first.clone();
    while !pending.is_empty() {
        let next = pending.iter().position(|fk| {
            placed.contains(&fk.from_table.as_str()) != placed.contains(&fk.to_table.as_str())
        });
        let Some(i) = next else {
            return Err(MechError::UnknownObject(format!(
                "spanning joins of {} do not connect its tables",
                subschema.id
            )));
        };
        let fk = pending.remove(i);
        let new = if placed.contains(&fk.from_table.as_str()) {
            &fk.to_table
        } else {
            &fk.from_table
        };
        let on: Vec<String> = fk
            .from_columns
            .iter()
            .zip(&fk.to_columns)
            .map(|(f, t)| format!("{}.{f} = {}.{t}", fk.from_table, fk.to_table))
            .collect();
        sql.push_str(&format!(" INNER JOIN {new} ON {}", on.join(" AND ")));
        placed.push(new);
    }
    Ok(sql)
}

fn numeric_literal(value: f64, sql_type: SqlType) -> String {
    match sql_type {
        SqlType::Integer => format!("{}", value.round() as i64),
        _ => format!("{value:.2}"),
    }
}

fn predicate(rng: &mut StageRng, col: Col) -> String {
    const OPS: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];
    let name = col.sql();
    let meta = &col.def.metadata;
    let numeric = col.def.sql_type.is_numeric();

    if let Some(values) = meta.enumerated_values.as_ref().filter(|v| !v.is_empty()) {
        let lit = |v: &String| if numeric { v.clone() } else { quote(v) };
        if values.len() > 1 && rng.gen_bool(0.3) {
            let m = rng.gen_range(2..=values.len().min(3));
            let mut picked = sample(rng, values.len(), m).into_vec();
            picked.sort_unstable();
            let list: Vec<String> = picked.into_iter().map(|i| lit(&values[i])).collect();
            return format!("{name} IN ({})", list.join(", "));
        }
        let op = if rng.gen_bool(0.8) { "=" } else { "<>" };
        return format!(
            "{name} {op} {}",
            lit(&values[rng.gen_range(0..values.len())])
        );
    }

    match col.def.sql_type {
        SqlType::Integer | SqlType::Decimal | SqlType::Float => {
            let (lo, hi) = meta
                .value_range
                .as_ref()
                .and_then(|r| {
                    Some((
                        r.min.trim().parse::<f64>().ok()?,
                        r.max.trim().parse::<f64>().ok()?,
                    ))
                })
                .filter(|(lo, hi)| lo <= hi && lo.is_finite() && hi.is_finite())
                .unwrap_or(DEFAULT_NUMERIC_RANGE);
            let t = col.def.sql_type;
            if rng.gen_bool(1.0 / 7.0) {
                let a = numeric_literal(rng.gen_range(lo..=hi), t);
                let b = numeric_literal(rng.gen_range(lo..=hi), t);
                let (a, b) = order_numeric(a, b);
                format!("{name} BETWEEN {a} AND {b}")
            } else {
                let value = numeric_literal(rng.gen_range(lo..=hi), t);
                format!("{name} {} {value}", OPS[rng.gen_range(0..OPS.len())])
            }
        }
        SqlType::Date => {
            let (lo, hi) = meta
                .value_range
                .as_ref()
                .and_then(|r| Some((parse_date(&r.min)?, parse_date(&r.max)?)))
                .filter(|(lo, hi)| lo <= hi)
                .unwrap_or(DEFAULT_DATE_RANGE);
            if rng.gen_bool(1.0 / 7.0) {
                let (a, b) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
                format!(
                    "{name} BETWEEN {} AND {}",
                    quote(&crate::tpch::civil_date(a.min(b))),
                    quote(&crate::tpch::civil_date(a.max(b)))
                )
            } else {
                let op = OPS[rng.gen_range(0..OPS.len())];
                format!(
                    "{name} {op} {}",
                    quote(&crate::tpch::civil_date(rng.gen_range(lo..=hi)))
                )
            }
        }
        SqlType::Boolean => format!(
            "{name} = {}",
            if rng.gen_bool(0.5) { "TRUE" } else { "FALSE" }
        ),
        SqlType::Char | SqlType::Varchar => match &meta.value_range {
            Some(range) => {
                let sampled = if rng.gen_bool(0.5) {
                    &range.min
                } else {
                    &range.max
                };
                match rng.gen_range(0..3) {
                    0 => format!("{name} = {}", quote(sampled)),
                    1 => {
                        let prefix: String = sampled
                            .chars()
                            .take(1)
                            .filter(|c| !matches!(c, '%' | '_'))
                            .collect();
                        format!("{name} LIKE {}", quote(&format!("{prefix}%")))
                    }
                    _ => format!("{name} >= {}", quote(sampled)),
                }
            }
            None => format!("{name} <> {}", quote(PLACEHOLDER_TEXT)),
        },
    }
}

fn order_numeric(a: String, b: String) -> (String, String) {
    let (x, y): (f64, f64) = (a.parse().unwrap_or(0.0), b.parse().unwrap_or(0.0));
    if x <= y {
        (a, b)
    } else {
        (b, a)
    }
}

/// A pool query offered to the prompt as a worked example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExample {
    pub query_id: String,
    pub sql: String,
    pub features: BTreeSet<ClauseTag>,
}

impl SeedExample {
    pub fn from_record(record: &QueryRecord) -> Self {
        SeedExample {
            query_id: record.id.clone(),
            sql: record.sql.clone(),
            features: clause_features(&record.sql),
        }
    }
}

/// Clause tags present anywhere in `sql`; empty when it does not parse.
pub fn clause_features(sql: &str) -> BTreeSet<ClauseTag> {
    let Ok(query) = crate::sql::parse_select(sql) else {
        return BTreeSet::new();
    };
    crate::sql::structure_counts(&query)
        .clauses
        .keys()
        .filter_map(|k| ClauseTag::parse(k))
        .collect()
}

/// Draws `k` examples without replacement. With a bias, each draw takes the
/// tagged part of the remaining pool with probability `bias_weight` and the
/// untagged part otherwise; an exhausted part falls back to the whole
/// remaining pool.
pub fn select_seed_examples(
    pool: &[QueryRecord],
    k: usize,
    bias: Option<ClauseTag>,
    bias_weight: f64,
    rng_seed: u64,
) -> Result<Vec<SeedExample>, MechError> {
    if k > pool.len() {
        return Err(MechError::InsufficientPool {
            requested: k,
            available: pool.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let examples: Vec<SeedExample> = pool.iter().map(SeedExample::from_record).collect();
    select_from_examples(&examples, k, bias, bias_weight, rng_seed)
}

/// [`select_seed_examples`] over pre-tagged examples.
pub fn select_from_examples(
    pool: &[SeedExample],
    k: usize,
    bias: Option<ClauseTag>,
    bias_weight: f64,
    rng_seed: u64,
) -> Result<Vec<SeedExample>, MechError> {
    if k > pool.len() {
        return Err(MechError::InsufficientPool {
            requested: k,
            available: pool.len(),
        });
    }
    if !(0.0..=1.0).contains(&bias_weight) {
        return Err(MechError::InvalidConfig(format!(
            "bias_weight {bias_weight} is outside [0, 1]"
        )));
    }
    let mut rng = stage_rng(rng_seed, &["seed-examples"]);
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let candidates: Vec<usize> = match bias {
            Some(tag) => {
                let want = rng.gen_bool(bias_weight);
                let part: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&i| pool[i].features.contains(&tag) == want)
                    .collect();
                if part.is_empty() {
                    remaining.clone()
                } else {
                    part
                }
            }
            None => remaining.clone(),
        };
        let pick = candidates[rng.gen_range(0..candidates.len())];
        remaining.retain(|&i| i != pick);
        chosen.push(pool[pick].clone());
    }
    Ok(chosen)
}
