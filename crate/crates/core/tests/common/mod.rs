//! Connected-subset counts on the TPC-H join graph, checked against brute force.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use querygen_core::schema::{infer_foreign_keys, ingest_ddl, FkInferenceConfig};
use querygen_core::subschema::{
    build_join_graph, count_connected, enumerate_subschemas, SubschemaPolicy,
};
use querygen_core::tpch::{TPCH_DDL, TPCH_DDL_KEYS_ONLY};
use querygen_core::JoinGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SUBSCHEMA_TARGET: usize = 187;
pub const RANDOM_GRAPHS: usize = 200;
pub const MAX_RANDOM_NODES: usize = 12;

fn oracle_count(graph: &JoinGraph, min_tables: usize) -> BTreeSet<Vec<String>> {
    let n = graph.nodes.len();
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut adjacency = vec![0u32; n];
    for e in &graph.edges {
        let (a, b) = (index[e.a.as_str()], index[e.b.as_str()]);
        adjacency[a] |= 1 << b;
        adjacency[b] |= 1 << a;
    }
    let mut out = BTreeSet::new();
    for mask in 1u32..(1u32 << n) {
        if (mask.count_ones() as usize) < min_tables {
            continue;
        }
        let mut reached = 1u32 << mask.trailing_zeros();
        loop {
            let mut next = reached;
            for (v, adj) in adjacency.iter().enumerate() {
                if reached & (1 << v) != 0 {
                    next |= adj & mask;
                }
            }
            if next == reached {
                break;
            }
            reached = next;
        }
        if reached == mask {
            out.insert(
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| graph.nodes[i].clone())
                    .collect(),
            );
        }
    }
    out
}

fn enumerated(graph: &JoinGraph) -> BTreeSet<Vec<String>> {
    enumerate_subschemas(graph, None)
        .unwrap()
        .into_iter()
        .map(|s| s.tables)
        .collect()
}

pub struct SubschemaFindings {
    pub counts: Vec<(String, usize)>,
    pub reaches_target: bool,
    pub tpch_oracle_ok: bool,
    pub random_oracle_ok: bool,
    pub elapsed: Duration,
}

pub fn subschema_findings() -> SubschemaFindings {
    let start = Instant::now();
    let declared = ingest_ddl(TPCH_DDL).unwrap();
    let config = FkInferenceConfig::default();
    let (inferred_only, _) = infer_foreign_keys(&ingest_ddl(TPCH_DDL_KEYS_ONLY).unwrap(), &config);
    let (union, _) = infer_foreign_keys(&declared, &config);
    let graphs = [
        ("declared", &declared),
        ("inferred", &inferred_only),
        ("declared+inferred", &union),
    ];

    let mut counts = Vec::new();
    let mut tpch_oracle_ok = true;
    for (label, catalog) in graphs {
        let graph = build_join_graph(catalog);
        tpch_oracle_ok &= enumerated(&graph) == oracle_count(&graph, 1);
        for (policy, min_tables) in [("with singletons", 1), ("without singletons", 2)] {
            let n = count_connected(
                &graph,
                &SubschemaPolicy {
                    min_tables,
                    ..SubschemaPolicy::default()
                },
            )
            .unwrap();
            tpch_oracle_ok &= n == oracle_count(&graph, min_tables).len();
            counts.push((format!("{label}/{policy}"), n));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(187);
    let mut random_oracle_ok = true;
    for _ in 0..RANDOM_GRAPHS {
        let n = rng.gen_range(1..=MAX_RANDOM_NODES);
        let nodes: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
        let p = rng.gen_range(0.05..0.6);
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(p) {
                    pairs.push((nodes[a].clone(), nodes[b].clone()));
                }
            }
        }
        let graph = JoinGraph::from_pairs(&nodes, &pairs);
        random_oracle_ok &= enumerated(&graph) == oracle_count(&graph, 1);
    }
    SubschemaFindings {
        reaches_target: counts.iter().any(|(_, n)| *n == SUBSCHEMA_TARGET),
        counts,
        tpch_oracle_ok,
        random_oracle_ok,
        elapsed: start.elapsed(),
    }
}
