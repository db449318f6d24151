//! Bipartite source/target idiom graph and its JSON file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EmbeddingMatrix, IngestError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Io(#[from] IngestError),
    #[error("corrupt graph: {0}")]
    CorruptGraph(String),
    #[error("node `{0}` has no feature row")]
    MissingFeature(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// Nodes are split into sources `0..num_sources()` and targets
/// `0..num_targets()`; an edge `(s, t)` always joins a source to a target.
/// Sources created by cold-start augmentation carry a `duplicate_of` link to
/// the original source whose features they copy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BipartiteGraph {
    pub source_lang: String,
    pub target_lang: String,
    source_ids: Vec<String>,
    target_ids: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    duplicate_of: BTreeMap<usize, usize>,
    source_index: HashMap<String, usize>,
    target_index: HashMap<String, usize>,
}

impl BipartiteGraph {
    pub fn new(source_lang: impl Into<String>, target_lang: impl Into<String>) -> Self {
        BipartiteGraph {
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            ..Default::default()
        }
    }

    /// Build a graph from id lists and index edges.
    pub fn from_parts(
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
        sources: impl IntoIterator<Item = impl Into<String>>,
        targets: impl IntoIterator<Item = impl Into<String>>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut g = BipartiteGraph::new(source_lang, target_lang);
        for s in sources {
            g.add_source(s)?;
        }
        for t in targets {
            g.add_target(t)?;
        }
        for (s, t) in edges {
            g.add_edge(s, t)?;
        }
        Ok(g)
    }

    fn check_fresh(&self, id: &str) -> Result<(), GraphError> {
        if id.is_empty() {
            return Err(GraphError::CorruptGraph("empty node id".into()));
        }
        if self.source_index.contains_key(id) || self.target_index.contains_key(id) {
            return Err(GraphError::CorruptGraph(format!("duplicate node id `{id}`")));
        }
        Ok(())
    }

    pub fn add_source(&mut self, id: impl Into<String>) -> Result<usize, GraphError> {
        let id = id.into();
        self.check_fresh(&id)?;
        let i = self.source_ids.len();
        self.source_index.insert(id.clone(), i);
        self.source_ids.push(id);
        Ok(i)
    }

    pub fn add_target(&mut self, id: impl Into<String>) -> Result<usize, GraphError> {
        let id = id.into();
        self.check_fresh(&id)?;
        let i = self.target_ids.len();
        self.target_index.insert(id.clone(), i);
        self.target_ids.push(id);
        Ok(i)
    }

    /// Add a source node that copies the features of `original`.
    pub fn add_duplicate_source(
        &mut self,
        id: impl Into<String>,
        original: usize,
    ) -> Result<usize, GraphError> {
        if original >= self.source_ids.len() || self.duplicate_of.contains_key(&original) {
            return Err(GraphError::CorruptGraph(format!(
                "duplicate must copy an original source, got index {original}"
            )));
        }
        let i = self.add_source(id)?;
        self.duplicate_of.insert(i, original);
        Ok(i)
    }

    /// Returns `true` if the edge was new.
    pub fn add_edge(&mut self, s: usize, t: usize) -> Result<bool, GraphError> {
        if s >= self.source_ids.len() || t >= self.target_ids.len() {
            return Err(GraphError::CorruptGraph(format!(
                "edge ({s}, {t}) out of range"
            )));
        }
        Ok(self.edges.insert((s, t)))
    }

    pub fn remove_edge(&mut self, s: usize, t: usize) -> bool {
        self.edges.remove(&(s, t))
    }

    pub fn num_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn num_targets(&self) -> usize {
        self.target_ids.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.source_ids.len() + self.target_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn target_ids(&self) -> &[String] {
        &self.target_ids
    }

    pub fn source_id(&self, s: usize) -> &str {
        &self.source_ids[s]
    }

    pub fn target_id(&self, t: usize) -> &str {
        &self.target_ids[t]
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.source_index.get(id).copied()
    }

    pub fn target_index(&self, id: &str) -> Option<usize> {
        self.target_index.get(id).copied()
    }

    /// Edges in ascending `(source, target)` order.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_set(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, s: usize, t: usize) -> bool {
        self.edges.contains(&(s, t))
    }

    pub fn duplicates(&self) -> &BTreeMap<usize, usize> {
        &self.duplicate_of
    }

    pub fn is_duplicate(&self, s: usize) -> bool {
        self.duplicate_of.contains_key(&s)
    }

    /// The original source whose features `s` carries (itself if not a duplicate).
    pub fn feature_source(&self, s: usize) -> usize {
        self.duplicate_of.get(&s).copied().unwrap_or(s)
    }

    /// Sources that are not augmentation duplicates.
    pub fn real_sources(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_sources()).filter(|s| !self.is_duplicate(*s))
    }

    /// Neighbor lists `(source -> targets, target -> sources)`, each sorted.
    pub fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut src = vec![Vec::new(); self.num_sources()];
        let mut tgt = vec![Vec::new(); self.num_targets()];
        for &(s, t) in &self.edges {
            src[s].push(t);
            tgt[t].push(s);
        }
        (src, tgt)
    }

    pub fn target_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_targets()];
        for &(_, t) in &self.edges {
            deg[t] += 1;
        }
        deg
    }

    pub fn source_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_sources()];
        for &(s, _) in &self.edges {
            deg[s] += 1;
        }
        deg
    }

    /// Copy of this graph with the same nodes and a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut g = self.clone();
        g.edges.clear();
        for (s, t) in edges {
            g.add_edge(s, t)?;
        }
        Ok(g)
    }

    /// Check that every node resolves to a feature row.
    pub fn check_features(&self, features: &EmbeddingMatrix) -> Result<(), GraphError> {
        for s in 0..self.num_sources() {
            let id = self.source_id(self.feature_source(s));
            if !features.contains(id) {
                return Err(GraphError::MissingFeature(id.to_string()));
            }
        }
        for id in &self.target_ids {
            if !features.contains(id) {
                return Err(GraphError::MissingFeature(id.clone()));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> GraphFile {
        let mut nodes = Vec::with_capacity(self.num_nodes());
        for (s, id) in self.source_ids.iter().enumerate() {
            nodes.push(NodeEntry {
                id: id.clone(),
                role: Role::Source,
                duplicate_of: self
                    .duplicate_of
                    .get(&s)
                    .map(|&o| self.source_ids[o].clone()),
            });
        }
        for id in &self.target_ids {
            nodes.push(NodeEntry {
                id: id.clone(),
                role: Role::Target,
                duplicate_of: None,
            });
        }
        let edges = self
            .edges
            .iter()
            .map(|&(s, t)| [self.source_ids[s].clone(), self.target_ids[t].clone()])
            .collect();
        GraphFile {
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            nodes,
            edges,
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        let mut g = BipartiteGraph::new(file.source_lang.clone(), file.target_lang.clone());
        let mut pending_dups = Vec::new();
        for node in &file.nodes {
            match node.role {
                Role::Source => {
                    let i = g.add_source(node.id.clone())?;
                    if let Some(orig) = &node.duplicate_of {
                        pending_dups.push((i, orig.clone()));
                    }
                }
                Role::Target => {
                    if node.duplicate_of.is_some() {
                        return Err(GraphError::CorruptGraph(format!(
                            "target `{}` cannot be a duplicate",
                            node.id
                        )));
                    }
                    g.add_target(node.id.clone())?;
                }
            }
        }
        for (i, orig) in pending_dups {
            let o = g.source_index(&orig).ok_or_else(|| {
                GraphError::CorruptGraph(format!("duplicate_of names unknown source `{orig}`"))
            })?;
            if o == i || pending_is_dup(&file, &orig) {
                return Err(GraphError::CorruptGraph(format!(
                    "`{}` must duplicate an original source",
                    g.source_ids[i]
                )));
            }
            g.duplicate_of.insert(i, o);
        }
        for [s, t] in &file.edges {
            let si = g
                .source_index(s)
                .ok_or_else(|| GraphError::CorruptGraph(format!("edge names unknown source `{s}`")))?;
            let ti = g
                .target_index(t)
                .ok_or_else(|| GraphError::CorruptGraph(format!("edge names unknown target `{t}`")))?;
            g.edges.insert((si, ti));
        }
        Ok(g)
    }
}

fn pending_is_dup(file: &GraphFile, id: &str) -> bool {
    file.nodes
        .iter()
        .any(|n| n.id == id && n.duplicate_of.is_some())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

/// On-disk graph: `{source_lang, target_lang, nodes, edges}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFile {
    pub source_lang: String,
    pub target_lang: String,
    pub nodes: Vec<NodeEntry>,
    pub edges: Vec<[String; 2]>,
}

pub fn graph_to_json(graph: &BipartiteGraph) -> String {
    serde_json::to_string_pretty(&graph.to_file()).expect("graph serialization is infallible")
}

pub fn graph_from_json(s: &str) -> Result<BipartiteGraph, GraphError> {
    let file: GraphFile =
        serde_json::from_str(s).map_err(|e| GraphError::CorruptGraph(e.to_string()))?;
    BipartiteGraph::from_file(file)
}

pub fn save_graph(graph: &BipartiteGraph, path: &Path) -> Result<(), GraphError> {
    let mut s = graph_to_json(graph);
    s.push('\n');
    fs::write(path, s).map_err(|e| GraphError::Io(IngestError::io(path, e)))
}

pub fn load_graph(path: &Path) -> Result<BipartiteGraph, GraphError> {
    let s = fs::read_to_string(path).map_err(|e| GraphError::Io(IngestError::io(path, e)))?;
    graph_from_json(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BipartiteGraph {
        BipartiteGraph::from_parts("en", "hi", ["en:a", "en:b"], ["hi:x"], [(1, 0), (0, 0)]).unwrap()
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = BipartiteGraph::new("en", "hi");
        assert_eq!(graph_from_json(&graph_to_json(&g)).unwrap(), g);
    }

    #[test]
    fn edge_order_in_file_is_irrelevant() {
        let g = small();
        let mut file = g.to_file();
        file.edges.reverse();
        let back = BipartiteGraph::from_file(file).unwrap();
        assert_eq!(back.edge_set(), g.edge_set());
        assert_eq!(back, g);
    }

    #[test]
    fn unknown_edge_endpoint_is_corrupt() {
        let mut file = small().to_file();
        file.edges.push(["en:a".into(), "hi:nope".into()]);
        assert!(matches!(
            BipartiteGraph::from_file(file),
            Err(GraphError::CorruptGraph(_))
        ));
        // an edge from a target to a source is also rejected
        let mut file = small().to_file();
        file.edges.push(["hi:x".into(), "en:a".into()]);
        assert!(matches!(
            BipartiteGraph::from_file(file),
            Err(GraphError::CorruptGraph(_))
        ));
    }

    #[test]
    fn duplicate_annotation_survives_round_trip() {
        let mut g = small();
        let d = g.add_duplicate_source("en:a#dup1@hi:x", 0).unwrap();
        g.add_edge(d, 0).unwrap();
        let back = graph_from_json(&graph_to_json(&g)).unwrap();
        assert_eq!(back.duplicates().get(&d), Some(&0));
        assert_eq!(back, g);
    }

    #[test]
    fn duplicate_node_ids_rejected() {
        let mut g = small();
        assert!(g.add_target("en:a").is_err());
    }
}
