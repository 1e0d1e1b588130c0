//! One pass over a parsed query that resolves names against the catalog and
//! counts structural features.
//!
//! Counting rules:
//! - joins: explicit JOINs plus `k - 1` for every comma list of `k` relations;
//! - clauses (`select`, `where`, `group_by`, `having`, `order_by`, `limit`):
//!   once per occurrence, sub-selects included;
//! - operators (`and`, `or`, `not`, `comparison`, `in`, `between`, `like`):
//!   every AST occurrence; `not` is the unary operator only;
//! - functions: every call, by lower-cased name (`count(*)` is `count`);
//! - sub-selects: SELECT blocks minus one;
//! - tables and columns: every reference that resolves to a catalog object.
//!   Wildcards and references to derived-table outputs are not counted.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Ident,
    JoinConstraint, JoinOperator, LimitClause, ObjectName, OrderByKind, Query, Select, SelectItem,
    SelectItemQualifiedWildcardKind, SetExpr, TableFactor, TableWithJoins, UnaryOperator, Value,
    Visit, Visitor, WindowType,
};

use crate::schema::{ColumnDef, SchemaCatalog};

/// Problems found while resolving a query against the catalog.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    UnknownTable { name: String },
    UnknownColumn { name: String },
    AmbiguousColumn { name: String },
    LabelArithmetic { column: String },
    EnumLiteral { column: String, literal: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureCounts {
    pub joins: u64,
    pub clauses: BTreeMap<String, u64>,
    pub operators: BTreeMap<String, u64>,
    pub functions: BTreeMap<String, u64>,
    pub selects: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Analysis {
    pub counts: StructureCounts,
    /// Catalog tables by number of references.
    pub tables: BTreeMap<String, u64>,
    /// `table.column` by number of references.
    pub columns: BTreeMap<String, u64>,
    pub issues: Vec<Issue>,
}

pub fn analyze(query: &Query, catalog: &SchemaCatalog) -> Analysis {
    let mut resolver = Resolver {
        catalog,
        ctes: Vec::new(),
        scopes: Vec::new(),
        tables: BTreeMap::new(),
        columns: BTreeMap::new(),
        issues: Vec::new(),
    };
    resolver.query(query);
    let mut issues = resolver.issues;
    issues.sort();
    issues.dedup();
    Analysis {
        counts: structure_counts(query),
        tables: resolver.tables,
        columns: resolver.columns,
        issues,
    }
}

/// Structural counts only, without resolving names.
pub fn structure_counts(query: &Query) -> StructureCounts {
    let mut counter = Counter::default();
    let _ = query.visit(&mut counter);
    counter.0
}

fn bump(map: &mut BTreeMap<String, u64>, key: &str) {
    *map.entry(key.to_string()).or_insert(0) += 1;
}

fn is_comparison(op: &BinaryOperator) -> bool {
    matches!(
        op,
        BinaryOperator::Eq
            | BinaryOperator::NotEq
            | BinaryOperator::Lt
            | BinaryOperator::LtEq
            | BinaryOperator::Gt
            | BinaryOperator::GtEq
    )
}

fn is_arithmetic(op: &BinaryOperator) -> bool {
    matches!(
        op,
        BinaryOperator::Plus
            | BinaryOperator::Minus
            | BinaryOperator::Multiply
            | BinaryOperator::Divide
            | BinaryOperator::Modulo
    )
}

fn last_name(name: &ObjectName) -> String {
    crate::schema::ddl::object_name(name)
}

#[derive(Default)]
struct Counter(StructureCounts);

impl Counter {
    fn tables_in_from(&mut self, from: &[TableWithJoins]) {
        self.0.joins += from.len().saturating_sub(1) as u64;
        self.0.joins += from.iter().map(|t| t.joins.len() as u64).sum::<u64>();
    }
}

impl Visitor for Counter {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if let Some(order_by) = &query.order_by {
            let nonempty = match &order_by.kind {
                OrderByKind::All(_) => true,
                OrderByKind::Expressions(exprs) => !exprs.is_empty(),
            };
            if nonempty {
                bump(&mut self.0.clauses, "order_by");
            }
        }
        let limited = match &query.limit_clause {
            Some(LimitClause::LimitOffset { limit, .. }) => limit.is_some(),
            Some(LimitClause::OffsetCommaLimit { .. }) => true,
            None => false,
        };
        if limited || query.fetch.is_some() {
            bump(&mut self.0.clauses, "limit");
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        self.0.selects += 1;
        bump(&mut self.0.clauses, "select");
        if select.selection.is_some() {
            bump(&mut self.0.clauses, "where");
        }
        let grouped = match &select.group_by {
            GroupByExpr::All(_) => true,
            GroupByExpr::Expressions(exprs, _) => !exprs.is_empty(),
        };
        if grouped {
            bump(&mut self.0.clauses, "group_by");
        }
        if select.having.is_some() {
            bump(&mut self.0.clauses, "having");
        }
        self.tables_in_from(&select.from);
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        if let TableFactor::NestedJoin {
            table_with_joins, ..
        } = factor
        {
            self.0.joins += table_with_joins.joins.len() as u64;
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        let ops = &mut self.0.operators;
        match expr {
            Expr::BinaryOp { op, .. } => match op {
                BinaryOperator::And => bump(ops, "and"),
                BinaryOperator::Or => bump(ops, "or"),
                op if is_comparison(op) => bump(ops, "comparison"),
                _ => {}
            },
            Expr::AnyOp { compare_op, .. } | Expr::AllOp { compare_op, .. }
                if is_comparison(compare_op) =>
            {
                bump(ops, "comparison")
            }
            Expr::UnaryOp {
                op: UnaryOperator::Not,
                ..
            } => bump(ops, "not"),
            Expr::InList { .. } | Expr::InSubquery { .. } => bump(ops, "in"),
            Expr::Between { .. } => bump(ops, "between"),
            Expr::Like { .. } | Expr::ILike { .. } => bump(ops, "like"),
            Expr::Function(f) => bump(&mut self.0.functions, &last_name(&f.name)),
            Expr::Extract { .. } => bump(&mut self.0.functions, "extract"),
            Expr::Substring { .. } => bump(&mut self.0.functions, "substring"),
            Expr::Trim { .. } => bump(&mut self.0.functions, "trim"),
            Expr::Position { .. } => bump(&mut self.0.functions, "position"),
            Expr::Ceil { .. } => bump(&mut self.0.functions, "ceil"),
            Expr::Floor { .. } => bump(&mut self.0.functions, "floor"),
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// Columns a relation exposes. `None` when they cannot be known statically.
type Columns = Option<Vec<String>>;

#[derive(Debug, Clone)]
enum Source {
    Table(String),
    Derived(Columns),
}

#[derive(Debug, Clone)]
struct Relation {
    name: String,
    source: Source,
}

#[derive(Debug, Default)]
struct Scope {
    relations: Vec<Relation>,
    aliases: Vec<String>,
    merged: BTreeSet<String>,
    natural: bool,
}

/// Where an expression sits; projection aliases are visible only in some clauses.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Place {
    Plain,
    AfterProjection,
}

enum Resolved<'c> {
    Base(&'c ColumnDef, String),
    Other,
}

struct Resolver<'c> {
    catalog: &'c SchemaCatalog,
    ctes: Vec<BTreeMap<String, Columns>>,
    scopes: Vec<Scope>,
    tables: BTreeMap<String, u64>,
    columns: BTreeMap<String, u64>,
    issues: Vec<Issue>,
}

fn ident(i: &Ident) -> String {
    i.value.to_lowercase()
}

impl<'c> Resolver<'c> {
    fn cte(&self, name: &str) -> Option<&Columns> {
        self.ctes.iter().rev().find_map(|frame| frame.get(name))
    }

    /// Walks a query and returns its output column names.
    fn query(&mut self, query: &Query) -> Columns {
        self.ctes.push(BTreeMap::new());
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                let name = ident(&cte.alias.name);
                let declared: Columns = (!cte.alias.columns.is_empty())
                    .then(|| cte.alias.columns.iter().map(|c| ident(&c.name)).collect());
                if with.recursive {
                    self.ctes
                        .last_mut()
                        .unwrap()
                        .insert(name.clone(), declared.clone());
                }
                let produced = self.query(&cte.query);
                self.ctes
                    .last_mut()
                    .unwrap()
                    .insert(name, declared.or(produced));
            }
        }
        let output = match query.body.as_ref() {
            SetExpr::Select(select) => self.select(select, Some(query)),
            body => {
                let output = self.set_expr(body);
                if let Some(order_by) = &query.order_by {
                    if let OrderByKind::Expressions(exprs) = &order_by.kind {
                        self.scopes.push(Scope {
                            relations: vec![Relation {
                                name: String::new(),
                                source: Source::Derived(output.clone()),
                            }],
                            ..Default::default()
                        });
                        for e in exprs {
                            self.expr(&e.expr, Place::Plain);
                        }
                        self.scopes.pop();
                    }
                }
                output
            }
        };
        self.ctes.pop();
        output
    }

    fn set_expr(&mut self, body: &SetExpr) -> Columns {
        match body {
            SetExpr::Select(select) => self.select(select, None),
            SetExpr::Query(q) => self.query(q),
            SetExpr::SetOperation { left, right, .. } => {
                let output = self.set_expr(left);
                self.set_expr(right);
                output
            }
            SetExpr::Values(values) => {
                for row in &values.rows {
                    for e in &row.content {
                        self.expr(e, Place::Plain);
                    }
                }
                None
            }
            _ => None,
        }
    }

    /// `owner` is the query whose body is this SELECT; its ORDER BY sees the
    /// SELECT's scope.
    fn select(&mut self, select: &Select, owner: Option<&Query>) -> Columns {
        self.scopes.push(Scope::default());
        for twj in &select.from {
            self.table_with_joins(twj);
        }

        let mut output: Vec<Option<String>> = Vec::new();
        let mut complete = true;
        for item in &select.projection {
            match item {
                SelectItem::UnnamedExpr(e) => {
                    self.expr(e, Place::Plain);
                    output.push(match e {
                        Expr::Identifier(i) => Some(ident(i)),
                        Expr::CompoundIdentifier(parts) => parts.last().map(ident),
                        _ => None,
                    });
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    self.expr(expr, Place::Plain);
                    self.current().aliases.push(ident(alias));
                    output.push(Some(ident(alias)));
                }
                SelectItem::ExprWithAliases { expr, aliases } => {
                    self.expr(expr, Place::Plain);
                    for a in aliases {
                        self.current().aliases.push(ident(a));
                        output.push(Some(ident(a)));
                    }
                }
                SelectItem::Wildcard(_) => {
                    let relations = self.current().relations.clone();
                    for r in &relations {
                        match self.relation_columns(r) {
                            Some(cols) => output.extend(cols.into_iter().map(Some)),
                            None => complete = false,
                        }
                    }
                }
                SelectItem::QualifiedWildcard(kind, _) => match kind {
                    SelectItemQualifiedWildcardKind::ObjectName(name) => {
                        let qualifier = last_name(name);
                        let found = self
                            .current()
                            .relations
                            .iter()
                            .find(|r| r.name == qualifier)
                            .cloned();
                        match found {
                            Some(r) => match self.relation_columns(&r) {
                                Some(cols) => output.extend(cols.into_iter().map(Some)),
                                None => complete = false,
                            },
                            None => {
                                self.issues.push(Issue::UnknownTable { name: qualifier });
                                complete = false;
                            }
                        }
                    }
                    SelectItemQualifiedWildcardKind::Expr(e) => {
                        self.expr(e, Place::Plain);
                        complete = false;
                    }
                },
            }
        }

        if let Some(selection) = &select.selection {
            self.expr(selection, Place::Plain);
        }
        if let GroupByExpr::Expressions(exprs, _) = &select.group_by {
            for e in exprs {
                self.expr(e, Place::AfterProjection);
            }
        }
        if let Some(having) = &select.having {
            self.expr(having, Place::AfterProjection);
        }
        if let Some(q) = owner {
            if let Some(order_by) = &q.order_by {
                if let OrderByKind::Expressions(exprs) = &order_by.kind {
                    for e in exprs {
                        self.expr(&e.expr, Place::AfterProjection);
                    }
                }
            }
        }
        self.scopes.pop();
        // Unnamed expressions get a name no reference can match.
        complete.then(|| {
            output
                .into_iter()
                .map(|c| c.unwrap_or_else(|| "?column?".into()))
                .collect()
        })
    }

    fn current(&mut self) -> &mut Scope {
        self.scopes.last_mut().expect("inside a SELECT")
    }

    fn relation_columns(&self, r: &Relation) -> Columns {
        match &r.source {
            Source::Table(t) => self
                .catalog
                .table(t)
                .map(|def| def.columns.iter().map(|c| c.name.clone()).collect()),
            Source::Derived(cols) => cols.clone(),
        }
    }

    fn table_with_joins(&mut self, twj: &TableWithJoins) {
        self.factor(&twj.relation);
        for join in &twj.joins {
            self.factor(&join.relation);
            let constraint = match &join.join_operator {
                JoinOperator::Join(c)
                | JoinOperator::Inner(c)
                | JoinOperator::Left(c)
                | JoinOperator::LeftOuter(c)
                | JoinOperator::Right(c)
                | JoinOperator::RightOuter(c)
                | JoinOperator::FullOuter(c)
                | JoinOperator::CrossJoin(c)
                | JoinOperator::Semi(c)
                | JoinOperator::LeftSemi(c)
                | JoinOperator::RightSemi(c)
                | JoinOperator::Anti(c)
                | JoinOperator::LeftAnti(c)
                | JoinOperator::RightAnti(c)
                | JoinOperator::StraightJoin(c) => Some(c),
                JoinOperator::AsOf {
                    match_condition,
                    constraint,
                } => {
                    self.expr(match_condition, Place::Plain);
                    Some(constraint)
                }
                _ => None,
            };
            match constraint {
                Some(JoinConstraint::On(e)) => self.expr(e, Place::Plain),
                Some(JoinConstraint::Using(names)) => {
                    for n in names {
                        let column = last_name(n);
                        let known = self.current().relations.clone().iter().any(|r| {
                            self.relation_columns(r)
                                .is_none_or(|cols| cols.contains(&column))
                        });
                        if !known {
                            self.issues.push(Issue::UnknownColumn {
                                name: column.clone(),
                            });
                        }
                        self.current().merged.insert(column);
                    }
                }
                Some(JoinConstraint::Natural) => self.current().natural = true,
                _ => {}
            }
        }
    }

    fn factor(&mut self, factor: &TableFactor) {
        let (name, source) = match factor {
            TableFactor::Table { name, alias, .. } => {
                let table = last_name(name);
                let source = if let Some(cols) = self.cte(&table) {
                    Source::Derived(cols.clone())
                } else if self.catalog.table(&table).is_some() {
                    bump(&mut self.tables, &table);
                    Source::Table(table.clone())
                } else {
                    self.issues.push(Issue::UnknownTable {
                        name: table.clone(),
                    });
                    Source::Derived(None)
                };
                (alias.as_ref().map_or(table, |a| ident(&a.name)), source)
            }
            TableFactor::Derived {
                lateral,
                subquery,
                alias,
                ..
            } => {
                // A derived table cannot see its siblings unless it is LATERAL.
                let sibling = if *lateral { None } else { self.scopes.pop() };
                let mut cols = self.query(subquery);
                if let Some(scope) = sibling {
                    self.scopes.push(scope);
                }
                if let Some(a) = alias {
                    if !a.columns.is_empty() {
                        cols = Some(a.columns.iter().map(|c| ident(&c.name)).collect());
                    }
                }
                (
                    alias.as_ref().map(|a| ident(&a.name)).unwrap_or_default(),
                    Source::Derived(cols),
                )
            }
            TableFactor::NestedJoin {
                table_with_joins, ..
            } => {
                self.table_with_joins(table_with_joins);
                return;
            }
            other => {
                let alias = match other {
                    TableFactor::TableFunction { alias, .. }
                    | TableFactor::Function { alias, .. }
                    | TableFactor::UNNEST { alias, .. } => alias.as_ref().map(|a| ident(&a.name)),
                    _ => None,
                };
                (alias.unwrap_or_default(), Source::Derived(None))
            }
        };
        self.current().relations.push(Relation { name, source });
    }

    /// Resolves a column reference, innermost scope first.
    fn resolve(&mut self, qualifier: Option<String>, column: String, place: Place) -> Resolved<'c> {
        let catalog = self.catalog;
        let depth = self.scopes.len();
        for (level, scope) in self.scopes.iter().enumerate().rev() {
            if let Some(q) = &qualifier {
                let Some(r) = scope.relations.iter().find(|r| &r.name == q) else {
                    continue;
                };
                return match &r.source {
                    Source::Table(t) => match catalog.column(t, &column) {
                        Some(def) => {
                            let key = format!("{t}.{column}");
                            bump(&mut self.columns, &key);
                            Resolved::Base(def, key)
                        }
                        None => {
                            self.issues.push(Issue::UnknownColumn {
                                name: format!("{q}.{column}"),
                            });
                            Resolved::Other
                        }
                    },
                    Source::Derived(Some(cols)) if !cols.contains(&column) => {
                        self.issues.push(Issue::UnknownColumn {
                            name: format!("{q}.{column}"),
                        });
                        Resolved::Other
                    }
                    Source::Derived(_) => Resolved::Other,
                };
            }

            let mut definite: Vec<&Relation> = Vec::new();
            let mut open = false;
            for r in &scope.relations {
                match &r.source {
                    Source::Table(t) if catalog.column(t, &column).is_some() => definite.push(r),
                    Source::Derived(Some(cols)) if cols.contains(&column) => definite.push(r),
                    Source::Derived(None) => open = true,
                    _ => {}
                }
            }
            if definite.len() > 1 && !(scope.natural || scope.merged.contains(&column)) {
                self.issues.push(Issue::AmbiguousColumn { name: column });
                return Resolved::Other;
            }
            if let Some(r) = definite.first() {
                if let Source::Table(t) = &r.source {
                    let def = catalog.column(t, &column).expect("checked above");
                    let key = format!("{t}.{column}");
                    bump(&mut self.columns, &key);
                    return Resolved::Base(def, key);
                }
                return Resolved::Other;
            }
            if open {
                return Resolved::Other;
            }
            if level + 1 == depth
                && place == Place::AfterProjection
                && scope.aliases.contains(&column)
            {
                return Resolved::Other;
            }
        }
        let name = match qualifier {
            Some(q) => {
                self.issues.push(Issue::UnknownTable { name: q.clone() });
                format!("{q}.{column}")
            }
            None => column,
        };
        self.issues.push(Issue::UnknownColumn { name });
        Resolved::Other
    }

    /// Resolves `e` when it is a bare column reference, possibly parenthesised.
    fn column_of(&mut self, e: &Expr, place: Place) -> Option<Resolved<'c>> {
        match e {
            Expr::Identifier(i) => Some(self.resolve(None, ident(i), place)),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let column = ident(&parts[parts.len() - 1]);
                let qualifier = ident(&parts[parts.len() - 2]);
                Some(self.resolve(Some(qualifier), column, place))
            }
            Expr::Nested(inner) => self.column_of(inner, place),
            _ => None,
        }
    }

    /// Walks `e`; when it is a column, returns what it resolved to.
    fn operand(&mut self, e: &Expr, place: Place) -> Option<Resolved<'c>> {
        match self.column_of(e, place) {
            Some(r) => Some(r),
            None => {
                self.expr(e, place);
                None
            }
        }
    }

    fn check_label(&mut self, resolved: &Option<Resolved<'c>>) {
        if let Some(Resolved::Base(def, key)) = resolved {
            if def.metadata.is_label {
                self.issues.push(Issue::LabelArithmetic {
                    column: key.clone(),
                });
            }
        }
    }

    fn check_enum(&mut self, resolved: &Option<Resolved<'c>>, literal: &Expr) {
        let Some(Resolved::Base(def, key)) = resolved else {
            return;
        };
        let Some(allowed) = &def.metadata.enumerated_values else {
            return;
        };
        let Some(text) = literal_text(literal) else {
            return;
        };
        let matches = |v: &String| {
            if def.sql_type.is_numeric() {
                if let (Ok(a), Ok(b)) = (v.trim().parse::<f64>(), text.trim().parse::<f64>()) {
                    return a == b;
                }
            }
            *v == text
        };
        if !allowed.iter().any(matches) {
            self.issues.push(Issue::EnumLiteral {
                column: key.clone(),
                literal: text,
            });
        }
    }

    fn expr(&mut self, e: &Expr, place: Place) {
        match e {
            Expr::Identifier(_) | Expr::CompoundIdentifier(_) => {
                self.column_of(e, place);
            }
            Expr::BinaryOp { left, op, right } => {
                let l = self.operand(left, place);
                let r = self.operand(right, place);
                if is_arithmetic(op) {
                    self.check_label(&l);
                    self.check_label(&r);
                }
                if matches!(op, BinaryOperator::Eq | BinaryOperator::NotEq) {
                    self.check_enum(&l, right);
                    self.check_enum(&r, left);
                }
            }
            Expr::UnaryOp { op, expr } => {
                let inner = self.operand(expr, place);
                if matches!(op, UnaryOperator::Minus | UnaryOperator::Plus) {
                    self.check_label(&inner);
                }
            }
            Expr::InList { expr, list, .. } => {
                let target = self.operand(expr, place);
                for item in list {
                    self.expr(item, place);
                    self.check_enum(&target, item);
                }
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.expr(expr, place);
                self.query(subquery);
            }
            Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => {
                self.query(subquery);
            }
            Expr::Between {
                expr, low, high, ..
            } => {
                for x in [expr, low, high] {
                    self.expr(x, place);
                }
            }
            Expr::Like {
                expr,
                pattern,
                escape_char,
                ..
            }
            | Expr::ILike {
                expr,
                pattern,
                escape_char,
                ..
            }
            | Expr::SimilarTo {
                expr,
                pattern,
                escape_char,
                ..
            } => {
                self.expr(expr, place);
                self.expr(pattern, place);
                if let Some(x) = escape_char {
                    self.expr(x, place);
                }
            }
            Expr::IsNull(x)
            | Expr::IsNotNull(x)
            | Expr::IsTrue(x)
            | Expr::IsNotTrue(x)
            | Expr::IsFalse(x)
            | Expr::IsNotFalse(x)
            | Expr::IsUnknown(x)
            | Expr::IsNotUnknown(x)
            | Expr::Nested(x)
            | Expr::Collate { expr: x, .. }
            | Expr::Cast { expr: x, .. }
            | Expr::Extract { expr: x, .. }
            | Expr::Ceil { expr: x, .. }
            | Expr::Floor { expr: x, .. } => self.expr(x, place),
            Expr::IsDistinctFrom(a, b)
            | Expr::IsNotDistinctFrom(a, b)
            | Expr::Position { expr: a, r#in: b }
            | Expr::AtTimeZone {
                timestamp: a,
                time_zone: b,
            }
            | Expr::AnyOp {
                left: a, right: b, ..
            }
            | Expr::AllOp {
                left: a, right: b, ..
            } => {
                self.expr(a, place);
                self.expr(b, place);
            }
            Expr::Substring {
                expr,
                substring_from,
                substring_for,
                ..
            } => {
                self.expr(expr, place);
                for x in [substring_from, substring_for].into_iter().flatten() {
                    self.expr(x, place);
                }
            }
            Expr::Trim {
                expr,
                trim_what,
                trim_characters,
                ..
            } => {
                self.expr(expr, place);
                if let Some(x) = trim_what {
                    self.expr(x, place);
                }
                for x in trim_characters.iter().flatten() {
                    self.expr(x, place);
                }
            }
            Expr::Case {
                operand,
                conditions,
                else_result,
                ..
            } => {
                if let Some(x) = operand {
                    self.expr(x, place);
                }
                for when in conditions {
                    self.expr(&when.condition, place);
                    self.expr(&when.result, place);
                }
                if let Some(x) = else_result {
                    self.expr(x, place);
                }
            }
            Expr::Tuple(items) => {
                for x in items {
                    self.expr(x, place);
                }
            }
            Expr::Interval(interval) => self.expr(&interval.value, place),
            Expr::Function(f) => {
                let name = last_name(&f.name);
                let aggregate_arithmetic = matches!(name.as_str(), "sum" | "avg");
                match &f.args {
                    FunctionArguments::List(list) => {
                        for arg in &list.args {
                            let inner = match arg {
                                FunctionArg::Unnamed(a) | FunctionArg::Named { arg: a, .. } => a,
                                FunctionArg::ExprNamed { arg: a, .. } => a,
                            };
                            if let FunctionArgExpr::Expr(x) = inner {
                                let resolved = self.operand(x, place);
                                if aggregate_arithmetic {
                                    self.check_label(&resolved);
                                }
                            }
                        }
                    }
                    FunctionArguments::Subquery(q) => {
                        self.query(q);
                    }
                    FunctionArguments::None => {}
                }
                if let Some(filter) = &f.filter {
                    self.expr(filter, place);
                }
                if let Some(WindowType::WindowSpec(spec)) = &f.over {
                    for x in &spec.partition_by {
                        self.expr(x, place);
                    }
                    for o in &spec.order_by {
                        self.expr(&o.expr, place);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Text of a literal operand, if `e` is one.
fn literal_text(e: &Expr) -> Option<String> {
    match e {
        Expr::Value(v) => match &v.value {
            Value::Number(n, _) => Some(n.clone()),
            Value::SingleQuotedString(s) | Value::DoubleQuotedString(s) => Some(s.clone()),
            Value::Boolean(b) => Some(b.to_string()),
            _ => None,
        },
        Expr::UnaryOp {
            op: UnaryOperator::Minus,
            expr,
        } => literal_text(expr).map(|t| format!("-{t}")),
        Expr::Nested(inner) => literal_text(inner),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ingest_ddl;
    use crate::sql::parse_select;

    fn catalog() -> SchemaCatalog {
        let mut c = ingest_ddl(
            "CREATE TABLE t (a INT, b INT, version VARCHAR(10), flag CHAR(1), x INT);\
             CREATE TABLE u (a INT, c INT);",
        )
        .unwrap();
        let t = c.table_mut("t").unwrap();
        t.column_mut("version").unwrap().metadata.is_label = true;
        let flag = &mut t.column_mut("flag").unwrap().metadata;
        flag.enumerated_values = Some(vec!["N".into(), "Y".into()]);
        flag.distinct_value_count = Some(2);
        c
    }

    fn run(sql: &str) -> Analysis {
        analyze(&parse_select(sql).unwrap(), &catalog())
    }

    fn map(entries: &[(&str, u64)]) -> BTreeMap<String, u64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn simple_select() {
        let a = run("SELECT a FROM t");
        assert_eq!(a.counts.joins, 0);
        assert_eq!(a.counts.clauses, map(&[("select", 1)]));
        assert_eq!(a.counts.selects, 1);
        assert_eq!(a.tables, map(&[("t", 1)]));
        assert_eq!(a.columns, map(&[("t.a", 1)]));
        assert!(a.issues.is_empty());
    }

    #[test]
    fn grouping_query() {
        let a = run("SELECT a, COUNT(*) FROM t GROUP BY a HAVING COUNT(*) > 1 ORDER BY a");
        assert_eq!(
            a.counts.clauses,
            map(&[
                ("select", 1),
                ("group_by", 1),
                ("having", 1),
                ("order_by", 1)
            ])
        );
        assert_eq!(a.counts.functions, map(&[("count", 2)]));
        assert_eq!(a.counts.operators, map(&[("comparison", 1)]));
        assert_eq!(a.columns, map(&[("t.a", 3)]));
    }

    #[test]
    fn derived_table() {
        let a = run("SELECT x FROM (SELECT x FROM t) s");
        assert_eq!(a.counts.selects - 1, 1);
        assert_eq!(a.counts.clauses, map(&[("select", 2)]));
        assert_eq!(a.columns, map(&[("t.x", 1)]));
        assert!(a.issues.is_empty());
    }

    #[test]
    fn joins_counted_both_ways() {
        assert_eq!(run("SELECT t.a FROM t, u").counts.joins, 1);
        assert_eq!(run("SELECT t.a FROM t JOIN u ON t.a = u.a").counts.joins, 1);
    }

    #[test]
    fn ambiguity_and_unknowns() {
        let a = run("SELECT a FROM t JOIN u ON t.a = u.a");
        assert_eq!(a.issues, vec![Issue::AmbiguousColumn { name: "a".into() }]);
        assert!(run("SELECT a FROM t JOIN u USING (a)").issues.is_empty());
        assert!(run("SELECT zz FROM t")
            .issues
            .contains(&Issue::UnknownColumn { name: "zz".into() }));
        assert!(run("SELECT a FROM nope")
            .issues
            .contains(&Issue::UnknownTable {
                name: "nope".into()
            }));
        assert!(!run("SELECT q.a FROM t").issues.is_empty());
    }

    #[test]
    fn label_arithmetic() {
        let a = run("SELECT version + 1 FROM t");
        assert_eq!(
            a.issues,
            vec![Issue::LabelArithmetic {
                column: "t.version".into()
            }]
        );
        assert!(!run("SELECT SUM(version) FROM t").issues.is_empty());
        assert!(run("SELECT version, COUNT(*) FROM t GROUP BY version")
            .issues
            .is_empty());
    }

    #[test]
    fn enum_literals() {
        let a = run("SELECT a FROM t WHERE flag = 'MAYBE'");
        assert_eq!(
            a.issues,
            vec![Issue::EnumLiteral {
                column: "t.flag".into(),
                literal: "MAYBE".into()
            }]
        );
        assert!(run("SELECT a FROM t WHERE flag IN ('Y', 'N')")
            .issues
            .is_empty());
        assert!(!run("SELECT a FROM t WHERE flag IN ('Y', 'Q')")
            .issues
            .is_empty());
        assert!(run("SELECT a FROM t WHERE 'Y' = flag").issues.is_empty());
    }

    #[test]
    fn order_by_alias_and_correlation() {
        assert!(run("SELECT a AS k FROM t ORDER BY k").issues.is_empty());
        assert!(!run("SELECT a AS k FROM t WHERE k > 1").issues.is_empty());
        let a = run("SELECT a FROM t WHERE EXISTS (SELECT 1 FROM u WHERE u.c = t.b)");
        assert!(a.issues.is_empty(), "{:?}", a.issues);
        assert_eq!(a.counts.selects, 2);
    }

    #[test]
    fn ctes_are_not_tables() {
        let a = run("WITH w AS (SELECT a FROM t) SELECT a FROM w");
        assert!(a.issues.is_empty());
        assert_eq!(a.tables, map(&[("t", 1)]));
        assert_eq!(a.columns, map(&[("t.a", 1)]));
    }
}
