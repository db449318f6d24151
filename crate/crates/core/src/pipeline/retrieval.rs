use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::contrastive::{attach_unseen, AttachConfig, Attachment, HeadIndex, ProjectionHead};
use crate::exec::Execution;
use crate::gnn::{LinkPredictor, NodeEmbeddings};
use crate::graph::BipartiteGraph;
use crate::ingest::{EmbeddingMatrix, IdiomRecord};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_K_PIVOT: usize = 3;
pub const DEFAULT_K_FINAL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target_id: String,
    pub probability: f64,
}

/// Ranked target idioms for one source idiom, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source_idiom_id: String,
    pub candidates: Vec<Candidate>,
    pub k: usize,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.target_id.as_str())
    }

    pub fn contains(&self, target_id: &str) -> bool {
        self.ids().any(|c| c == target_id)
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

/// Sort `(target id, score)` pairs by descending score, ties by id, keep `k`.
fn ranked(source: &str, mut scored: Vec<(String, f64)>, k: usize) -> CandidateSet {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    CandidateSet {
        source_idiom_id: source.to_string(),
        candidates: scored
            .into_iter()
            .map(|(target_id, probability)| Candidate { target_id, probability })
            .collect(),
        k,
    }
}

/// A trained model bound to the graph it passes messages over, with node
/// embeddings computed once.
#[derive(Debug, Clone)]
pub struct Retriever<'a> {
    pub model: &'a LinkPredictor,
    pub graph: &'a BipartiteGraph,
    pub features: &'a EmbeddingMatrix,
    pub exec: Execution,
    embeddings: NodeEmbeddings,
}

impl<'a> Retriever<'a> {
    pub fn new(
        model: &'a LinkPredictor,
        graph: &'a BipartiteGraph,
        features: &'a EmbeddingMatrix,
        exec: Execution,
    ) -> Result<Self, PipelineError> {
        let embeddings = model.encode(graph, features, exec)?;
        Ok(Retriever {
            model,
            graph,
            features,
            exec,
            embeddings,
        })
    }

    pub fn embeddings(&self) -> &NodeEmbeddings {
        &self.embeddings
    }

    /// Source index of `id`, rejecting augmentation duplicates.
    pub fn source_node(&self, id: &str) -> Result<usize, PipelineError> {
        match self.graph.source_index(id) {
            Some(s) if !self.graph.is_duplicate(s) => Ok(s),
            _ => Err(PipelineError::UnknownNode(id.to_string())),
        }
    }

    /// Link probability of `source` against every target, in target order.
    pub fn scores(&self, source: usize) -> Vec<f64> {
        self.model.scorer(&self.embeddings).scores_for_source(source)
    }

    pub fn retrieve_topk(&self, source_id: &str, k: usize) -> Result<CandidateSet, PipelineError> {
        let s = self.source_node(source_id)?;
        self.topk_for_node(s, k)
    }

    pub fn topk_for_node(&self, s: usize, k: usize) -> Result<CandidateSet, PipelineError> {
        if k == 0 {
            return Err(PipelineError::InvalidK);
        }
        if s >= self.graph.num_sources() {
            return Err(PipelineError::UnknownNode(format!("source #{s}")));
        }
        topk_from_scores(self.graph, self.graph.source_id(s), &self.scores(s), k)
    }
}

fn topk_from_scores(
    graph: &BipartiteGraph,
    source_id: &str,
    scores: &[f64],
    k: usize,
) -> Result<CandidateSet, PipelineError> {
    let scored = graph
        .target_ids()
        .iter()
        .zip(scores)
        .map(|(id, &p)| (id.clone(), p))
        .collect();
    Ok(ranked(source_id, scored, k))
}

/// Top-`k` targets for a seen source idiom.
pub fn retrieve_topk(
    model: &LinkPredictor,
    graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    source_id: &str,
    k: usize,
) -> Result<CandidateSet, PipelineError> {
    Retriever::new(model, graph, features, Execution::default())?.retrieve_topk(source_id, k)
}

/// Candidates for an unseen idiom plus the attachment that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenRetrieval {
    pub candidates: CandidateSet,
    pub attachment: Attachment,
}

/// Attach `idiom` to a copy of the retriever's graph, re-encode, and rank
/// every target for the new node.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_unseen<R: Rng>(
    retriever: &Retriever<'_>,
    idiom: &IdiomRecord,
    embedding: &[f32],
    head: &ProjectionHead,
    index: &HeadIndex,
    attach: &AttachConfig,
    k: usize,
    rng: &mut R,
) -> Result<UnseenRetrieval, PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidK);
    }
    let attachment = attach_unseen(idiom, embedding, retriever.graph, head, index, attach, rng)?;
    let mut features = retriever.features.clone();
    if !features.contains(&idiom.id) {
        features.push(idiom.id.clone(), embedding.to_vec())?;
    }
    let emb = retriever.model.encode(&attachment.graph, &features, retriever.exec)?;
    let scores = retriever.model.scorer(&emb).scores_for_source(attachment.node);
    let candidates = topk_from_scores(&attachment.graph, &idiom.id, &scores, k)?;
    Ok(UnseenRetrieval { candidates, attachment })
}

/// Compose `A -> pivot` and `pivot -> C` retrieval.
///
/// The best `k_pivot` pivot idioms for the source are expanded into their
/// best `k_final` targets in C. A target's score is the product of the two
/// link probabilities, maximized over the pivots that reach it. Pivots the
/// second graph does not know are skipped.
pub fn pivot_retrieve(
    ab: &Retriever<'_>,
    bc: &Retriever<'_>,
    source_id: &str,
    k_pivot: usize,
    k_final: usize,
) -> Result<CandidateSet, PipelineError> {
    if k_pivot == 0 || k_final == 0 {
        return Err(PipelineError::InvalidK);
    }
    let shared: BTreeSet<&str> = ab
        .graph
        .target_ids()
        .iter()
        .filter(|id| bc.source_node(id).is_ok())
        .map(String::as_str)
        .collect();
    if shared.is_empty() {
        return Err(PipelineError::PivotVocabularyMismatch(
            "the two graphs share no pivot idioms".into(),
        ));
    }
    let pivots = ab.retrieve_topk(source_id, k_pivot)?;
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    let mut resolved = 0;
    for p in &pivots.candidates {
        let Ok(node) = bc.source_node(&p.target_id) else {
            log::debug!("pivot `{}` is not in the second graph; skipped", p.target_id);
            continue;
        };
        resolved += 1;
        for c in bc.topk_for_node(node, k_final)?.candidates {
            let score = p.probability * c.probability;
            let slot = merged.entry(c.target_id).or_insert(score);
            if score > *slot {
                *slot = score;
            }
        }
    }
    if resolved == 0 {
        return Err(PipelineError::PivotVocabularyMismatch(format!(
            "none of the top {k_pivot} pivots for `{source_id}` occur in the second graph"
        )));
    }
    Ok(ranked(source_id, merged.into_iter().collect(), k_final))
}
