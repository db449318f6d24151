//! Cold-start augmentation by duplicating the neighbors of sparse targets.
//!
//! A target with fewer than `delta` neighbors is *cold*. For every cold
//! target `t` and every source neighbor `s` of `t`, `copies` new source nodes
//! are created that carry `s`'s features and connect only to `t`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::BipartiteGraph;

pub const DEFAULT_DELTA: usize = 3;
pub const DEFAULT_COPIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub delta: usize,
    pub copies: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            delta: DEFAULT_DELTA,
            copies: DEFAULT_COPIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdWarmPartition {
    pub cold: BTreeSet<usize>,
    pub warm: BTreeSet<usize>,
    pub delta: usize,
}

/// Targets with degree `< delta` are cold, the rest warm.
pub fn classify_nodes(graph: &BipartiteGraph, delta: usize) -> ColdWarmPartition {
    assert!(delta >= 1, "delta must be at least 1");
    let (mut cold, mut warm) = (BTreeSet::new(), BTreeSet::new());
    for (t, deg) in graph.target_degrees().into_iter().enumerate() {
        if deg < delta {
            cold.insert(t);
        } else {
            warm.insert(t);
        }
    }
    ColdWarmPartition { cold, warm, delta }
}

/// A graph with duplicate source nodes appended after the originals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedGraph {
    /// The augmented graph itself; duplicates are marked via `duplicate_of`.
    pub graph: BipartiteGraph,
    /// Duplicate source index -> original source index.
    pub duplicates: BTreeMap<usize, usize>,
    pub added_edges: BTreeSet<(usize, usize)>,
    pub partition: ColdWarmPartition,
}

impl AugmentedGraph {
    /// Wrap a graph without adding anything.
    pub fn identity(graph: BipartiteGraph, delta: usize) -> Self {
        let partition = classify_nodes(&graph, delta);
        AugmentedGraph {
            graph,
            duplicates: BTreeMap::new(),
            added_edges: BTreeSet::new(),
            partition,
        }
    }
}

pub fn duplicate_name(source_id: &str, k: usize, target_id: &str) -> String {
    format!("{source_id}#dup{k}@{target_id}")
}

pub fn augment_graph(graph: &BipartiteGraph, config: AugmentConfig) -> AugmentedGraph {
    assert!(config.copies >= 1, "copies must be at least 1");
    let partition = classify_nodes(graph, config.delta);
    let (_, target_nbrs) = graph.adjacency();
    let mut out = graph.clone();
    let mut duplicates = BTreeMap::new();
    let mut added_edges = BTreeSet::new();
    for &t in &partition.cold {
        for &s in &target_nbrs[t] {
            let original = graph.feature_source(s);
            for k in 1..=config.copies {
                let name = duplicate_name(graph.source_id(s), k, graph.target_id(t));
                let d = out
                    .add_duplicate_source(name, original)
                    .expect("duplicate names are unique per (source, copy, target)");
                out.add_edge(d, t).expect("indices are in range");
                duplicates.insert(d, original);
                added_edges.insert((d, t));
            }
        }
    }
    AugmentedGraph {
        graph: out,
        duplicates,
        added_edges,
        partition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(target_degree: usize) -> BipartiteGraph {
        let sources: Vec<String> = (0..target_degree).map(|i| format!("s{i}")).collect();
        BipartiteGraph::from_parts("en", "hi", sources, ["t0", "t1"], (0..target_degree).map(|s| (s, 0)))
            .unwrap()
    }

    #[test]
    fn degree_below_delta_is_cold() {
        let p = classify_nodes(&star(1), 3);
        assert!(p.cold.contains(&0));
        let p = classify_nodes(&star(3), 3);
        assert!(p.warm.contains(&0));
        // t1 has no edges in either graph
        assert!(p.cold.contains(&1));
    }

    #[test]
    fn edgeless_graph_is_all_cold() {
        let g = BipartiteGraph::from_parts("en", "hi", ["a"], ["x", "y"], []).unwrap();
        let p = classify_nodes(&g, 3);
        assert_eq!(p.cold.len(), 2);
        assert!(p.warm.is_empty());
    }

    #[test]
    fn single_neighbor_cold_target_gains_two_duplicates() {
        let g = star(1);
        let aug = augment_graph(&g, AugmentConfig::default());
        assert_eq!(aug.graph.num_sources(), 3);
        assert_eq!(aug.added_edges.len(), 2);
        assert_eq!(aug.graph.target_degrees()[0], 3);
        assert_eq!(aug.graph.source_id(1), "s0#dup1@t0");
        assert_eq!(aug.graph.source_id(2), "s0#dup2@t0");
        assert!(aug.duplicates.values().all(|&o| o == 0));
        // the isolated target t1 has nothing to copy
        assert_eq!(aug.graph.target_degrees()[1], 0);
    }

    #[test]
    fn warm_graph_is_unchanged() {
        let g = BipartiteGraph::from_parts(
            "en",
            "hi",
            ["a", "b", "c"],
            ["x"],
            [(0, 0), (1, 0), (2, 0)],
        )
        .unwrap();
        let aug = augment_graph(&g, AugmentConfig::default());
        assert_eq!(aug.graph, g);
        assert!(aug.duplicates.is_empty());
    }
}
