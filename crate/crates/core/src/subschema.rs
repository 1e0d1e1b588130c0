//! Foreign-key join graph and connected table subsets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::short_hash;
use crate::schema::{ForeignKey, Provenance, SchemaCatalog};

/// Node count above which enumeration refuses to run.
pub const DEFAULT_SAFETY_LIMIT: usize = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubschemaError {
    #[error("join graph has {nodes} nodes, above the enumeration limit of {limit}")]
    GraphTooLarge { nodes: usize, limit: usize },
    #[error("tables {0:?} are not connected in the join graph")]
    NotConnected(Vec<String>),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("invalid subschema policy: {0}")]
    InvalidPolicy(String),
}

/// An undirected edge between two tables (`a < b`) with every foreign key that links them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub a: String,
    pub b: String,
    pub fks: Vec<ForeignKey>,
}

/// Tables as nodes (sorted by name), one edge per linked table pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<JoinEdge>,
}

impl JoinGraph {
    /// Builds a graph from bare node and edge names. Useful for tests and for
    /// graphs that do not come from a catalog; the edges carry no foreign keys.
    pub fn from_pairs<S: AsRef<str>>(nodes: &[S], pairs: &[(S, S)]) -> Self {
        let mut edges: BTreeMap<(String, String), JoinEdge> = BTreeMap::new();
        for (x, y) in pairs {
            let (x, y) = (x.as_ref().to_string(), y.as_ref().to_string());
            if x == y {
                continue;
            }
            let (a, b) = if x < y { (x, y) } else { (y, x) };
            edges.entry((a.clone(), b.clone())).or_insert(JoinEdge {
                a,
                b,
                fks: Vec::new(),
            });
        }
        let mut nodes: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
        nodes.sort();
        nodes.dedup();
        JoinGraph {
            nodes,
            edges: edges.into_values().collect(),
        }
    }

    pub fn index_of(&self, table: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.as_str().cmp(table)).ok()
    }

    /// Adjacency as bitmasks over node indices.
    fn adjacency(&self) -> Vec<u64> {
        let mut adj = vec![0u64; self.nodes.len()];
        for e in &self.edges {
            let (i, j) = (self.index_of(&e.a).unwrap(), self.index_of(&e.b).unwrap());
            adj[i] |= 1 << j;
            adj[j] |= 1 << i;
        }
        adj
    }

    /// Whether the subgraph induced by `tables` is connected. The empty set is not.
    pub fn is_connected(&self, tables: &BTreeSet<String>) -> Result<bool, SubschemaError> {
        let mut members = Vec::new();
        for t in tables {
            members.push(
                self.index_of(t)
                    .ok_or_else(|| SubschemaError::UnknownTable(t.clone()))?,
            );
        }
        let Some(&start) = members.first() else {
            return Ok(false);
        };
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                let (i, j) = (self.index_of(&e.a).unwrap(), self.index_of(&e.b).unwrap());
                let next = if i == v {
                    j
                } else if j == v {
                    i
                } else {
                    continue;
                };
                if member_set.contains(&next) && seen.insert(next) {
                    stack.push(next);
                }
            }
        }
        Ok(seen.len() == member_set.len())
    }
}

/// One node per table; one edge per table pair linked by at least one foreign key.
/// Declared keys precede inferred ones in each edge's annotation.
pub fn build_join_graph(catalog: &SchemaCatalog) -> JoinGraph {
    let mut nodes = catalog.table_names();
    nodes.sort();
    let mut edges: BTreeMap<(String, String), Vec<ForeignKey>> = BTreeMap::new();
    let mut fks: Vec<&ForeignKey> = catalog.fk_edges.iter().collect();
    fks.sort_by_key(|fk| fk.provenance != Provenance::Declared);
    for fk in fks {
        if fk.from_table == fk.to_table {
            continue;
        }
        let key = if fk.from_table < fk.to_table {
            (fk.from_table.clone(), fk.to_table.clone())
        } else {
            (fk.to_table.clone(), fk.from_table.clone())
        };
        edges.entry(key).or_default().push(fk.clone());
    }
    JoinGraph {
        nodes,
        edges: edges
            .into_iter()
            .map(|((a, b), fks)| JoinEdge { a, b, fks })
            .collect(),
    }
}

/// A connected set of tables and the joins that connect it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subschema {
    pub id: String,
    /// Sorted table names.
    pub tables: Vec<String>,
    /// `tables.len() - 1` foreign keys forming a spanning tree.
    pub spanning_joins: Vec<ForeignKey>,
}

impl Subschema {
    pub fn contains(&self, table: &str) -> bool {
        self.tables
            .binary_search_by(|t| t.as_str().cmp(table))
            .is_ok()
    }
}

/// Stable id of a table set: hash of the sorted names joined by commas.
pub fn subschema_id<S: AsRef<str>>(tables: &[S]) -> String {
    let mut names: Vec<&str> = tables.iter().map(|t| t.as_ref()).collect();
    names.sort_unstable();
    short_hash(&names.join(","), 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubschemaPolicy {
    pub min_tables: usize,
    pub max_tables: Option<usize>,
    pub safety_limit: usize,
}

impl Default for SubschemaPolicy {
    fn default() -> Self {
        SubschemaPolicy {
            min_tables: 1,
            max_tables: None,
            safety_limit: DEFAULT_SAFETY_LIMIT,
        }
    }
}

/// Every connected induced subgraph with at most `max_tables` nodes.
pub fn enumerate_subschemas(
    graph: &JoinGraph,
    max_tables: Option<usize>,
) -> Result<Vec<Subschema>, SubschemaError> {
    enumerate_with_policy(
        graph,
        &SubschemaPolicy {
            max_tables,
            ..Default::default()
        },
    )
}

pub fn enumerate_with_policy(
    graph: &JoinGraph,
    policy: &SubschemaPolicy,
) -> Result<Vec<Subschema>, SubschemaError> {
    let masks = connected_masks(graph, policy)?;
    let mut sets: Vec<Vec<String>> = masks
        .into_iter()
        .map(|m| {
            (0..graph.nodes.len())
                .filter(|i| m & (1 << i) != 0)
                .map(|i| graph.nodes[i].clone())
                .collect()
        })
        .collect();
    sets.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    sets.into_iter()
        .map(|tables| {
            let set: BTreeSet<String> = tables.iter().cloned().collect();
            Ok(Subschema {
                id: subschema_id(&tables),
                spanning_joins: choose_spanning_joins(graph, &set)?,
                tables,
            })
        })
        .collect()
}

/// Number of connected subsets without building the subschemas.
pub fn count_connected(
    graph: &JoinGraph,
    policy: &SubschemaPolicy,
) -> Result<usize, SubschemaError> {
    Ok(connected_masks(graph, policy)?.len())
}

fn connected_masks(
    graph: &JoinGraph,
    policy: &SubschemaPolicy,
) -> Result<Vec<u64>, SubschemaError> {
    let n = graph.nodes.len();
    let limit = policy.safety_limit.min(63);
    if n > limit {
        return Err(SubschemaError::GraphTooLarge { nodes: n, limit });
    }
    if policy.max_tables == Some(0) {
        return Err(SubschemaError::InvalidPolicy(
            "max_tables must be at least 1".into(),
        ));
    }
    let cap = policy.max_tables.unwrap_or(n);
    let adj = graph.adjacency();
    let mut out = Vec::new();
    for v in 0..n {
        // Anchor each subset at its smallest member: only nodes above v may join.
        let above = !((1u64 << (v + 1)) - 1);
        let ext = adj[v] & above;
        extend(&adj, 1 << v, adj[v] | (1 << v), ext, above, cap, &mut out);
    }
    out.retain(|m| m.count_ones() as usize >= policy.min_tables);
    Ok(out)
}

/// ESU-style expansion. `closed` is the subset plus its neighbourhood; a node
/// enters `ext` only through the first member that reaches it, so every
/// connected subset is produced once.
fn extend(
    adj: &[u64],
    sub: u64,
    closed: u64,
    mut ext: u64,
    above: u64,
    cap: usize,
    out: &mut Vec<u64>,
) {
    out.push(sub);
    if sub.count_ones() as usize >= cap {
        return;
    }
    while ext != 0 {
        let w = ext.trailing_zeros() as usize;
        ext &= ext - 1;
        let exclusive = adj[w] & !closed & above;
        extend(
            adj,
            sub | (1 << w),
            closed | adj[w],
            ext | exclusive,
            above,
            cap,
            out,
        );
    }
}

/// Deterministic spanning tree: edges inside the set in lexicographic order,
/// added greedily when they join two components. Each edge contributes its
/// first foreign key.
pub fn choose_spanning_joins(
    graph: &JoinGraph,
    tables: &BTreeSet<String>,
) -> Result<Vec<ForeignKey>, SubschemaError> {
    for t in tables {
        if graph.index_of(t).is_none() {
            return Err(SubschemaError::UnknownTable(t.clone()));
        }
    }
    let members: Vec<&String> = tables.iter().collect();
    let pos = |name: &str| members.iter().position(|m| m.as_str() == name);
    let mut parent: Vec<usize> = (0..members.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut joins = Vec::new();
    // graph.edges is already sorted by (a, b)
    for e in &graph.edges {
        let (Some(i), Some(j)) = (pos(&e.a), pos(&e.b)) else {
            continue;
        };
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            joins.push(e.fks.first().cloned().unwrap_or_else(|| ForeignKey {
                from_table: e.a.clone(),
                from_columns: Vec::new(),
                to_table: e.b.clone(),
                to_columns: Vec::new(),
                provenance: Provenance::Inferred,
            }));
        }
    }
    if members.is_empty() || joins.len() + 1 != members.len() {
        return Err(SubschemaError::NotConnected(
            tables.iter().cloned().collect(),
        ));
    }
    Ok(joins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ingest_ddl;

    fn names(subs: &[Subschema]) -> Vec<Vec<&str>> {
        subs.iter()
            .map(|s| s.tables.iter().map(String::as_str).collect())
            .collect()
    }

    #[test]
    fn path_graph() {
        let g = JoinGraph::from_pairs(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let subs = enumerate_subschemas(&g, None).unwrap();
        assert_eq!(
            names(&subs),
            vec![
                vec!["A"],
                vec!["B"],
                vec!["C"],
                vec!["A", "B"],
                vec!["B", "C"],
                vec!["A", "B", "C"]
            ]
        );
        assert!(subs
            .iter()
            .all(|s| s.spanning_joins.len() + 1 == s.tables.len()));
    }

    #[test]
    fn single_node_and_cap() {
        let g = JoinGraph::from_pairs(&["A"], &[]);
        assert_eq!(enumerate_subschemas(&g, None).unwrap().len(), 1);
        let path = JoinGraph::from_pairs(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        assert_eq!(enumerate_subschemas(&path, Some(2)).unwrap().len(), 5);
        assert!(enumerate_subschemas(&path, Some(0)).is_err());
    }

    #[test]
    fn graph_building_collapses_parallel_keys() {
        let c = ingest_ddl(
            "CREATE TABLE a (id INT PRIMARY KEY);\
             CREATE TABLE b (x INT REFERENCES a(id), y INT REFERENCES a(id));\
             CREATE TABLE c (z INT);",
        )
        .unwrap();
        let g = build_join_graph(&c);
        assert_eq!(g.nodes, vec!["a", "b", "c"]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].fks.len(), 2);
    }

    #[test]
    fn spanning_joins_on_triangle() {
        let g = JoinGraph::from_pairs(&["A", "B", "C"], &[("A", "B"), ("B", "C"), ("A", "C")]);
        let set: BTreeSet<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let joins = choose_spanning_joins(&g, &set).unwrap();
        let pairs: Vec<(String, String)> = joins
            .into_iter()
            .map(|f| (f.from_table, f.to_table))
            .collect();
        assert_eq!(
            pairs,
            vec![("A".into(), "B".into()), ("A".into(), "C".into())]
        );
    }

    #[test]
    fn disconnected_set_is_rejected() {
        let g = JoinGraph::from_pairs(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let set: BTreeSet<String> = ["A", "C"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            choose_spanning_joins(&g, &set),
            Err(SubschemaError::NotConnected(_))
        ));
        assert!(!g.is_connected(&set).unwrap());
    }

    #[test]
    fn safety_limit() {
        let nodes: Vec<String> = (0..30).map(|i| format!("t{i:02}")).collect();
        let g = JoinGraph::from_pairs(&nodes, &[]);
        assert_eq!(
            enumerate_subschemas(&g, None),
            Err(SubschemaError::GraphTooLarge {
                nodes: 30,
                limit: 24
            })
        );
    }

    #[test]
    fn ids_ignore_order() {
        assert_eq!(subschema_id(&["b", "a"]), subschema_id(&["a", "b"]));
        assert_ne!(subschema_id(&["a"]), subschema_id(&["a", "b"]));
    }
}
