//! Contrastive projection head and unseen-idiom attachment.
//!
//! A linear head is trained with a triplet margin loss so that source idioms
//! sharing a target end up close together, and idioms from unrelated parts of
//! the graph end up far apart. At inference time an idiom that was never in
//! the graph is projected with the same head, matched against the projected
//! seen sources, and wired to targets linked to its nearest neighbors so the
//! inductive encoder can embed it.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteGraph, GraphError};
use crate::ingest::{EmbeddingMatrix, IdiomRecord};
use crate::nn::{
    init_params, load_checkpoint, save_checkpoint, Adam, AdamConfig, DenseMatrix, NnError, ParamSpec,
    ParamStore,
};

pub const HEAD_WEIGHT: &str = "bcl.proj";
pub const HEAD_BIAS: &str = "bcl.proj.bias";
/// 1x1 tensor holding the margin the head was trained with.
pub const HEAD_MARGIN: &str = "bcl.margin";

pub const DEFAULT_HEAD_DIM: usize = 256;
pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.75;
pub const DEFAULT_TOP_M: usize = 5;
pub const DEFAULT_ATTACH_TARGETS: usize = 5;

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("no source pair lies in different connected components")]
    NoNegativesAvailable,
    #[error("no triplets to train on")]
    NoTriplets,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: loss is not finite")]
    NonFiniteLoss,
    #[error("no seen source reaches similarity {tau} (best {best:.4})")]
    NoSimilarNeighbor { best: f64, tau: f64 },
    #[error("the nearest sources have no target neighbors")]
    EmptyTargetPool,
    #[error("idiom language `{got}` does not match the graph's source language `{expected}`")]
    LanguageMismatch { expected: String, got: String },
    #[error("graph has no source nodes")]
    EmptyGraph,
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("projected vector is zero")]
    ZeroVector,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Source-node indices of one training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Connected-component label of every node, over unified indices
/// (sources first, then targets). Duplicate sources are ignored and get
/// their own singleton labels.
pub fn connected_components(graph: &BipartiteGraph) -> Vec<usize> {
    let s_count = graph.num_sources();
    let n = graph.num_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, t) in graph.edges() {
        if graph.is_duplicate(s) {
            continue;
        }
        let (a, b) = (find(&mut parent, s), find(&mut parent, s_count + t));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    (0..n).map(|v| find(&mut parent, v)).collect()
}

/// Up to `per_anchor` distinct triplets for every source that has at least
/// one co-neighbor.
///
/// Positives are sources that share a target with the anchor. Negatives are
/// sources in a different connected component, so no path joins them to the
/// anchor. Duplicate sources never take part.
pub fn mine_triplets<R: Rng>(
    graph: &BipartiteGraph,
    per_anchor: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>, ContrastiveError> {
    let comp = connected_components(graph);
    let sources: Vec<usize> = graph.real_sources().collect();
    let distinct: BTreeSet<usize> = sources.iter().map(|&s| comp[s]).collect();
    if distinct.len() < 2 {
        return Err(ContrastiveError::NoNegativesAvailable);
    }
    let (src_nbrs, tgt_nbrs) = graph.adjacency();
    let mut out = Vec::new();
    for &a in &sources {
        let positives: BTreeSet<usize> = src_nbrs[a]
            .iter()
            .flat_map(|&t| tgt_nbrs[t].iter().copied())
            .filter(|&p| p != a && !graph.is_duplicate(p))
            .collect();
        if positives.is_empty() || per_anchor == 0 {
            continue;
        }
        let positives: Vec<usize> = positives.into_iter().collect();
        let negatives: Vec<usize> = sources.iter().copied().filter(|&n| comp[n] != comp[a]).collect();
        if negatives.is_empty() {
            continue;
        }
        let total = positives.len() * negatives.len();
        let pair = |i: usize| (positives[i / negatives.len()], negatives[i % negatives.len()]);
        let picked: Vec<usize> = if per_anchor >= total {
            (0..total).collect()
        } else {
            rand::seq::index::sample(rng, total, per_anchor).into_vec()
        };
        for i in picked {
            let (positive, negative) = pair(i);
            out.push(Triplet {
                anchor: a,
                positive,
                negative,
            });
        }
    }
    Ok(out)
}

fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `max(0, |h_a - h_p| - |h_a - h_n| + alpha)`
pub fn triplet_loss(h_a: &[f64], h_p: &[f64], h_n: &[f64], alpha: f64) -> Result<f64, ContrastiveError> {
    if h_p.len() != h_a.len() || h_n.len() != h_a.len() {
        let got = if h_p.len() != h_a.len() { h_p.len() } else { h_n.len() };
        return Err(ContrastiveError::DimMismatch {
            expected: h_a.len(),
            got,
        });
    }
    if !(alpha > 0.0) {
        return Err(ContrastiveError::InvalidMargin(alpha));
    }
    Ok((euclidean(h_a, h_p) - euclidean(h_a, h_n) + alpha).max(0.0))
}

/// Linear projection `W x + b` trained with the triplet loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub params: ParamStore,
    margin: f64,
}

impl ProjectionHead {
    pub fn init(in_dim: usize, out_dim: usize, margin: f64, seed: u64) -> Result<Self, ContrastiveError> {
        if !(margin > 0.0) {
            return Err(ContrastiveError::InvalidMargin(margin));
        }
        let specs = [ParamSpec::weight(HEAD_WEIGHT, out_dim, in_dim), ParamSpec::bias(HEAD_BIAS, out_dim)];
        Ok(ProjectionHead {
            params: init_params(&specs, seed)?,
            margin,
        })
    }

    pub fn from_params(params: ParamStore, margin: f64) -> Result<Self, ContrastiveError> {
        if !(margin > 0.0) {
            return Err(ContrastiveError::InvalidMargin(margin));
        }
        let w = params.require(HEAD_WEIGHT)?;
        let b = params.require(HEAD_BIAS)?;
        if b.shape() != (1, w.rows()) {
            return Err(NnError::ShapeMismatch {
                name: HEAD_BIAS.into(),
                expected: (1, w.rows()),
                got: b.shape(),
            }
            .into());
        }
        Ok(ProjectionHead { params, margin })
    }

    pub fn in_dim(&self) -> usize {
        self.weight().cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight().rows()
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    fn weight(&self) -> &DenseMatrix {
        self.params.get(HEAD_WEIGHT).expect("validated on construction")
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>, ContrastiveError> {
        if x.len() != self.in_dim() {
            return Err(ContrastiveError::DimMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(project_with(&self.params, x))
    }

    /// Tensors written to an `IDCM` checkpoint, margin included.
    pub fn to_store(&self) -> ParamStore {
        let mut store = self.params.clone();
        let margin = DenseMatrix::from_vec(1, 1, vec![self.margin as f32]).expect("1x1");
        store.insert(HEAD_MARGIN, margin).expect("margin name is reserved");
        store
    }

    pub fn from_store(store: &ParamStore) -> Result<Self, ContrastiveError> {
        let margin = store.require(HEAD_MARGIN)?.get(0, 0) as f64;
        let mut params = ParamStore::new();
        params.insert(HEAD_WEIGHT, store.require(HEAD_WEIGHT)?.clone())?;
        params.insert(HEAD_BIAS, store.require(HEAD_BIAS)?.clone())?;
        ProjectionHead::from_params(params, margin)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContrastiveError> {
        Ok(save_checkpoint(&self.to_store(), path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ContrastiveError> {
        ProjectionHead::from_store(&load_checkpoint(path)?)
    }
}

fn project_with(params: &ParamStore, x: &[f32]) -> Vec<f64> {
    let w = params.get(HEAD_WEIGHT).expect("head weight");
    let b = params.get(HEAD_BIAS).expect("head bias");
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; w.rows()];
    w.matvec(&xs, &mut out);
    for (o, &bb) in out.iter_mut().zip(b.row(0)) {
        *o += bb as f64;
    }
    out
}

/// Feature rows of one triplet: anchor, positive, negative.
pub type TripletRows<'a> = [&'a [f32]; 3];

/// Mean triplet loss over `batch` and, if requested, its gradient with
/// respect to the head parameters. At a zero distance the subgradient 0 is used.
pub fn triplet_objective(
    params: &ParamStore,
    margin: f64,
    batch: &[TripletRows<'_>],
    want_grad: bool,
) -> Result<(f64, Option<ParamStore>), ContrastiveError> {
    if batch.is_empty() {
        return Err(ContrastiveError::NoTriplets);
    }
    let w = params.require(HEAD_WEIGHT)?;
    let (rows_out, cols) = w.shape();
    // gradients accumulate in f64 and are rounded once at the end
    let mut gw = if want_grad { vec![0.0f64; rows_out * cols] } else { Vec::new() };
    let mut gb = if want_grad { vec![0.0f64; rows_out] } else { Vec::new() };
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for rows in batch {
        for r in rows {
            if r.len() != cols {
                return Err(ContrastiveError::DimMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
        }
        let [ha, hp, hn] = rows.map(|r| project_with(params, r));
        let (dp, dn) = (euclidean(&ha, &hp), euclidean(&ha, &hn));
        let loss = dp - dn + margin;
        if loss <= 0.0 {
            continue;
        }
        total += loss;
        if !want_grad {
            continue;
        }
        for k in 0..rows_out {
            let up = if dp > 0.0 { (ha[k] - hp[k]) / dp } else { 0.0 };
            let un = if dn > 0.0 { (ha[k] - hn[k]) / dn } else { 0.0 };
            let gh = [scale * (up - un), -scale * up, scale * un];
            gb[k] += gh[0] + gh[1] + gh[2];
            let row = &mut gw[k * cols..(k + 1) * cols];
            for (x, &g) in rows.iter().zip(&gh) {
                if g == 0.0 {
                    continue;
                }
                for (acc, &xc) in row.iter_mut().zip(x.iter()) {
                    *acc += g * xc as f64;
                }
            }
        }
    }
    let grads = if want_grad {
        let mut g = params.zeros_like();
        for (dst, &v) in g.get_mut(HEAD_WEIGHT).expect("head weight").as_mut_slice().iter_mut().zip(&gw) {
            *dst = v as f32;
        }
        for (dst, &v) in g.get_mut(HEAD_BIAS).expect("head bias").as_mut_slice().iter_mut().zip(&gb) {
            *dst = v as f32;
        }
        Some(g)
    } else {
        None
    };
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub out_dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Triplets mined per anchor.
    pub per_anchor: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            out_dim: DEFAULT_HEAD_DIM,
            margin: DEFAULT_MARGIN,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            per_anchor: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTraining {
    pub head: ProjectionHead,
    /// Mean loss over all triplets before the first update.
    pub initial_loss: f64,
    /// Mean loss over all triplets after each epoch.
    pub losses: Vec<f64>,
}

/// Feature rows for every triplet, looked up by source id.
pub fn triplet_rows<'a>(
    graph: &BipartiteGraph,
    triplets: &[Triplet],
    features: &'a EmbeddingMatrix,
) -> Result<Vec<TripletRows<'a>>, ContrastiveError> {
    let lookup = |s: usize| {
        let id = graph.source_id(graph.feature_source(s));
        features.get(id).ok_or_else(|| ContrastiveError::MissingEmbedding(id.to_string()))
    };
    triplets
        .iter()
        .map(|t| Ok([lookup(t.anchor)?, lookup(t.positive)?, lookup(t.negative)?]))
        .collect()
}

/// Adam on the mean triplet loss over shuffled minibatches.
pub fn train_head(
    graph: &BipartiteGraph,
    triplets: &[Triplet],
    features: &EmbeddingMatrix,
    config: &HeadConfig,
) -> Result<HeadTraining, ContrastiveError> {
    if triplets.is_empty() {
        return Err(ContrastiveError::NoTriplets);
    }
    if config.epochs == 0 || config.batch_size == 0 || config.out_dim == 0 || !(config.lr > 0.0) {
        return Err(ContrastiveError::InvalidConfig(
            "epochs, batch_size, out_dim and lr must be positive".into(),
        ));
    }
    let rows = triplet_rows(graph, triplets, features)?;
    let mut head = ProjectionHead::init(features.dim(), config.out_dim, config.margin, config.seed)?;
    let mut opt = Adam::new(
        &head.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7419_1e75);
    let (initial_loss, _) = triplet_objective(&head.params, head.margin, &rows, false)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TripletRows<'_>> = chunk.iter().map(|&i| rows[i]).collect();
            let (loss, grads) = triplet_objective(&head.params, head.margin, &batch, true)?;
            if !loss.is_finite() {
                return Err(ContrastiveError::NonFiniteLoss);
            }
            opt.step(&mut head.params, &grads.expect("gradient requested"))?;
        }
        let (loss, _) = triplet_objective(&head.params, head.margin, &rows, false)?;
        if !loss.is_finite() {
            return Err(ContrastiveError::NonFiniteLoss);
        }
        losses.push(loss);
    }
    Ok(HeadTraining {
        head,
        initial_loss,
        losses,
    })
}

/// Projected, unit-normalized feature rows of every real source.
#[derive(Debug, Clone)]
pub struct HeadIndex {
    sources: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>, ContrastiveError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ContrastiveError::ZeroVector);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

impl HeadIndex {
    pub fn build(
        head: &ProjectionHead,
        graph: &BipartiteGraph,
        features: &EmbeddingMatrix,
    ) -> Result<Self, ContrastiveError> {
        let sources: Vec<usize> = graph.real_sources().collect();
        let vectors = sources
            .iter()
            .map(|&s| {
                let id = graph.source_id(s);
                let x = features.get(id).ok_or_else(|| ContrastiveError::MissingEmbedding(id.to_string()))?;
                normalized(head.project(x)?)
            })
            .collect::<Result<_, _>>()?;
        Ok(HeadIndex { sources, vectors })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// `(source, cosine)` for every indexed source, most similar first,
    /// ties by source index.
    pub fn similarities(&self, head: &ProjectionHead, x: &[f32]) -> Result<Vec<(usize, f64)>, ContrastiveError> {
        let q = normalized(head.project(x)?)?;
        let mut out: Vec<(usize, f64)> = self
            .sources
            .iter()
            .zip(&self.vectors)
            .map(|(&s, v)| (s, q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachConfig {
    /// Nearest seen sources whose targets form the pool.
    pub top_m: usize,
    /// Minimum head-space cosine for a source to count as similar.
    pub tau: f64,
    /// Targets sampled from the pool.
    pub max_targets: usize,
}

impl Default for AttachConfig {
    fn default() -> Self {
        AttachConfig {
            top_m: DEFAULT_TOP_M,
            tau: DEFAULT_TAU,
            max_targets: DEFAULT_ATTACH_TARGETS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    /// Copy of the input graph with the new source and its edges.
    pub graph: BipartiteGraph,
    pub node: usize,
    /// Attached target indices, ascending.
    pub targets: Vec<usize>,
    /// The similar sources used, with their head-space cosine.
    pub neighbors: Vec<(usize, f64)>,
}

/// Add `idiom` to a copy of `graph`, connected to up to
/// `config.max_targets` targets sampled from the neighborhoods of its
/// `config.top_m` most similar seen sources. Only sources with cosine at
/// least `config.tau` qualify.
pub fn attach_unseen<R: Rng>(
    idiom: &IdiomRecord,
    embedding: &[f32],
    graph: &BipartiteGraph,
    head: &ProjectionHead,
    index: &HeadIndex,
    config: &AttachConfig,
    rng: &mut R,
) -> Result<Attachment, ContrastiveError> {
    if idiom.lang != graph.source_lang {
        return Err(ContrastiveError::LanguageMismatch {
            expected: graph.source_lang.clone(),
            got: idiom.lang.clone(),
        });
    }
    if index.is_empty() {
        return Err(ContrastiveError::EmptyGraph);
    }
    if config.top_m == 0 || config.max_targets == 0 {
        return Err(ContrastiveError::InvalidConfig("top_m and max_targets must be positive".into()));
    }
    let sims = index.similarities(head, embedding)?;
    let best = sims[0].1;
    if best < config.tau {
        return Err(ContrastiveError::NoSimilarNeighbor { best, tau: config.tau });
    }
    let neighbors: Vec<(usize, f64)> = sims
        .into_iter()
        .take_while(|&(_, c)| c >= config.tau)
        .take(config.top_m)
        .collect();
    let (src_nbrs, _) = graph.adjacency();
    let pool: Vec<usize> = neighbors
        .iter()
        .flat_map(|&(s, _)| src_nbrs[s].iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.is_empty() {
        return Err(ContrastiveError::EmptyTargetPool);
    }
    let mut targets: Vec<usize> = pool
        .choose_multiple(rng, config.max_targets.min(pool.len()))
        .copied()
        .collect();
    targets.sort_unstable();
    let mut g = graph.clone();
    let node = g.add_source(idiom.id.clone())?;
    for &t in &targets {
        g.add_edge(node, t)?;
    }
    Ok(Attachment {
        graph: g,
        node,
        targets,
        neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_components() -> BipartiteGraph {
        BipartiteGraph::from_parts("en", "hi", ["s1", "s2", "s3"], ["t1", "t2"], [(0, 0), (1, 0), (2, 1)]).unwrap()
    }

    #[test]
    fn triplet_loss_examples() {
        let a = [0.0, 0.0];
        assert_eq!(triplet_loss(&a, &a, &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&a, &[1.0, 0.0], &a, 1.0).unwrap(), 2.0);
        assert_eq!(triplet_loss(&a, &a, &a, 1.0).unwrap(), 1.0);
        assert!(matches!(
            triplet_loss(&a, &[1.0], &a, 1.0),
            Err(ContrastiveError::DimMismatch { expected: 2, got: 1 })
        ));
        assert!(triplet_loss(&a, &a, &a, 0.0).is_err());
    }

    #[test]
    fn mines_the_only_valid_triplets() {
        let g = two_components();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = mine_triplets(&g, 10, &mut rng).unwrap();
        assert_eq!(
            t,
            vec![
                Triplet { anchor: 0, positive: 1, negative: 2 },
                Triplet { anchor: 1, positive: 0, negative: 2 },
            ]
        );
    }

    #[test]
    fn connected_graph_has_no_negatives() {
        let g = BipartiteGraph::from_parts("en", "hi", ["s1", "s2"], ["t1"], [(0, 0), (1, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(mine_triplets(&g, 3, &mut rng), Err(ContrastiveError::NoNegativesAvailable)));
    }

    #[test]
    fn head_checkpoint_round_trip() {
        let head = ProjectionHead::init(6, 3, 1.0, 4).unwrap();
        let back = ProjectionHead::from_store(&head.to_store()).unwrap();
        assert_eq!(back, head);
    }

    #[test]
    fn attach_rejects_wrong_language() {
        let g = two_components();
        let mut feats = EmbeddingMatrix::new(2);
        for (id, v) in [("s1", [1.0, 0.0]), ("s2", [0.9, 0.1]), ("s3", [0.0, 1.0])] {
            feats.push(id, v.to_vec()).unwrap();
        }
        let head = ProjectionHead::init(2, 2, 1.0, 0).unwrap();
        let index = HeadIndex::build(&head, &g, &feats).unwrap();
        let rec = IdiomRecord::new("x", "ta", "text");
        let err = attach_unseen(
            &rec,
            &[1.0, 0.0],
            &g,
            &head,
            &index,
            &AttachConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(ContrastiveError::LanguageMismatch { .. })));
    }
}
