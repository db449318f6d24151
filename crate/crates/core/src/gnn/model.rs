//! Two-layer mean-aggregation SAGE encoder and MLP link decoder.
//!
//! Layer `l` maps every node `v` to
//! `act(W_l · [h_v ‖ mean_{u ∈ N(v)} h_u] + b_l)` with ReLU after the first
//! layer and identity after the second. A link `(i, j)` is scored as
//! `sigmoid(w₂ · relu(W₁ · [h_i ‖ h_j] + b₁) + b₂)`.
//!
//! All passes run in `f64` over `f32` parameters. The first decoder layer is
//! evaluated as `W₁ᵃ·h_i + W₁ᵇ·h_j`, in that order, everywhere (training,
//! single-pair decoding and bulk scoring) so scores agree bit for bit.

use serde::{Deserialize, Serialize};

use super::GnnError;
use crate::exec::Execution;
use crate::graph::BipartiteGraph;
use crate::ingest::EmbeddingMatrix;
use crate::nn::{dot_f32_f64, init_params, relu, sigmoid, DenseMatrix, ParamSpec, ParamStore};

pub const SAGE1_W: &str = "sage1.weight";
pub const SAGE1_B: &str = "sage1.bias";
pub const SAGE2_W: &str = "sage2.weight";
pub const SAGE2_B: &str = "sage2.bias";
pub const MLP1_W: &str = "mlp1.weight";
pub const MLP1_B: &str = "mlp1.bias";
pub const MLP2_W: &str = "mlp2.weight";
pub const MLP2_B: &str = "mlp2.bias";

// Position of each tensor in the parameter store.
const I_S1W: usize = 0;
const I_S1B: usize = 1;
const I_S2W: usize = 2;
const I_S2B: usize = 3;
const I_M1W: usize = 4;
const I_M1B: usize = 5;
const I_M2W: usize = 6;
const I_M2B: usize = 7;

/// Clamp applied to predicted probabilities inside the BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Row-major `f64` matrix with one row per node in unified order:
/// sources first, then targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        NodeMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        NodeMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    /// Node features for every node of `graph`; duplicates use their original's row.
    pub fn from_graph(graph: &BipartiteGraph, features: &EmbeddingMatrix) -> Result<Self, GnnError> {
        graph.check_features(features)?;
        let dim = features.dim();
        let mut data = Vec::with_capacity(graph.num_nodes() * dim);
        for s in 0..graph.num_sources() {
            let id = graph.source_id(graph.feature_source(s));
            data.extend(features.get(id).unwrap().iter().map(|&x| x as f64));
        }
        for id in graph.target_ids() {
            data.extend(features.get(id).unwrap().iter().map(|&x| x as f64));
        }
        Ok(NodeMatrix {
            rows: graph.num_nodes(),
            cols: dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Symmetric neighbor lists over unified node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    num_sources: usize,
    nbrs: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_graph(graph: &BipartiteGraph) -> Self {
        let s_count = graph.num_sources();
        let mut nbrs = vec![Vec::new(); graph.num_nodes()];
        for (s, t) in graph.edges() {
            nbrs[s].push(s_count + t);
            nbrs[s_count + t].push(s);
        }
        Adjacency {
            num_sources: s_count,
            nbrs,
        }
    }

    /// Build directly from neighbor lists (used to test order invariance).
    pub fn from_lists(num_sources: usize, nbrs: Vec<Vec<usize>>) -> Self {
        Adjacency { num_sources, nbrs }
    }

    pub fn num_nodes(&self) -> usize {
        self.nbrs.len()
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nbrs[v]
    }

    pub fn target_node(&self, t: usize) -> usize {
        self.num_sources + t
    }
}

/// Elementwise mean of the neighbors' rows; zeros for an isolated node.
///
/// Neighbor rows are summed in ascending node order so the result does not
/// depend on how the neighbor list happens to be ordered.
pub fn mean_aggregate(node: usize, adj: &Adjacency, features: &NodeMatrix) -> Vec<f64> {
    let mut out = vec![0.0; features.cols()];
    let nbrs = adj.neighbors(node);
    if nbrs.is_empty() {
        return out;
    }
    let mut order: Vec<usize> = nbrs.to_vec();
    order.sort_unstable();
    for u in order {
        for (o, &x) in out.iter_mut().zip(features.row(u)) {
            *o += x;
        }
    }
    let inv = 1.0 / nbrs.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// One SAGE layer: `weight` is `out x (2 * in)`, `bias` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayerParams {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
    pub activation: Activation,
}

struct LayerPass {
    agg: NodeMatrix,
    pre: NodeMatrix,
    out: NodeMatrix,
}

fn layer_forward(
    weight: &DenseMatrix,
    bias: &DenseMatrix,
    activation: Activation,
    adj: &Adjacency,
    h: &NodeMatrix,
    exec: Execution,
) -> Result<LayerPass, GnnError> {
    let in_dim = h.cols();
    let out_dim = weight.rows();
    if weight.cols() != 2 * in_dim || bias.cols() != out_dim || adj.num_nodes() != h.rows() {
        return Err(GnnError::ShapeMismatch(format!(
            "layer {}x{} on {} nodes of width {in_dim}",
            weight.rows(),
            weight.cols(),
            h.rows()
        )));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = exec.map(h.rows(), |v| {
        let agg = mean_aggregate(v, adj, h);
        let x = h.row(v);
        let pre: Vec<f64> = (0..out_dim)
            .map(|r| {
                let w = weight.row(r);
                let own = dot_f32_f64(&w[..in_dim], x);
                let nb = dot_f32_f64(&w[in_dim..], &agg);
                own + nb + bias.as_slice()[r] as f64
            })
            .collect();
        (agg, pre)
    });
    let mut pass = LayerPass {
        agg: NodeMatrix::zeros(h.rows(), in_dim),
        pre: NodeMatrix::zeros(h.rows(), out_dim),
        out: NodeMatrix::zeros(h.rows(), out_dim),
    };
    for (v, (agg, pre)) in rows.into_iter().enumerate() {
        pass.agg.row_mut(v).copy_from_slice(&agg);
        let out = pass.out.row_mut(v);
        for (o, &z) in out.iter_mut().zip(&pre) {
            *o = match activation {
                Activation::Relu => relu(z),
                Activation::Identity => z,
            };
        }
        pass.pre.row_mut(v).copy_from_slice(&pre);
    }
    Ok(pass)
}

/// `h'_v = act(W · [h_v ‖ mean(N(v))] + b)` for every node at once.
pub fn sage_forward(
    layer: &SageLayerParams,
    adj: &Adjacency,
    features: &NodeMatrix,
) -> Result<NodeMatrix, GnnError> {
    layer_forward(
        &layer.weight,
        &layer.bias,
        layer.activation,
        adj,
        features,
        Execution::Sequential,
    )
    .map(|p| p.out)
}

/// Gradients of `out` w.r.t. the layer's parameters (and optionally its input).
fn layer_backward(
    weight: &DenseMatrix,
    adj: &Adjacency,
    input: &NodeMatrix,
    pass: &LayerPass,
    activation: Activation,
    d_out: &NodeMatrix,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut NodeMatrix>,
) {
    let in_dim = input.cols();
    let out_dim = weight.rows();
    let width = 2 * in_dim;
    let mut d_agg = d_input.as_ref().map(|_| NodeMatrix::zeros(input.rows(), in_dim));
    let mut d_in_local = d_input.as_ref().map(|_| NodeMatrix::zeros(input.rows(), in_dim));
    let mut dz = vec![0.0; out_dim];
    for v in 0..input.rows() {
        let mut any = false;
        for r in 0..out_dim {
            let g = d_out.row(v)[r];
            dz[r] = match activation {
                Activation::Relu if pass.pre.row(v)[r] <= 0.0 => 0.0,
                _ => g,
            };
            any |= dz[r] != 0.0;
        }
        if !any {
            continue;
        }
        let x = input.row(v);
        let a = pass.agg.row(v);
        for r in 0..out_dim {
            let g = dz[r];
            if g == 0.0 {
                continue;
            }
            let row = &mut d_weight[r * width..(r + 1) * width];
            for (dw, &xi) in row[..in_dim].iter_mut().zip(x) {
                *dw += g * xi;
            }
            for (dw, &ai) in row[in_dim..].iter_mut().zip(a) {
                *dw += g * ai;
            }
            d_bias[r] += g;
        }
        if let (Some(d_in), Some(d_ag)) = (d_in_local.as_mut(), d_agg.as_mut()) {
            let (di, da) = (d_in.row_mut(v), d_ag.row_mut(v));
            for r in 0..out_dim {
                let g = dz[r];
                if g == 0.0 {
                    continue;
                }
                let w = weight.row(r);
                for (o, &wi) in di.iter_mut().zip(&w[..in_dim]) {
                    *o += g * wi as f64;
                }
                for (o, &wi) in da.iter_mut().zip(&w[in_dim..]) {
                    *o += g * wi as f64;
                }
            }
        }
    }
    if let (Some(d_input), Some(mut d_in), Some(d_ag)) = (d_input, d_in_local, d_agg) {
        // push the aggregate's gradient back to each neighbor, in node order
        for v in 0..input.rows() {
            let nbrs = adj.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let grad = d_ag.row(v);
            for &u in nbrs {
                for (o, &g) in d_in.row_mut(u).iter_mut().zip(grad) {
                    *o += g * inv;
                }
            }
        }
        *d_input = d_in;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub in_dim: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
}

impl ModelDims {
    pub fn new(in_dim: usize, hidden: usize) -> Self {
        ModelDims {
            in_dim,
            hidden,
            mlp_hidden: hidden,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight(SAGE1_W, self.hidden, 2 * self.in_dim),
            ParamSpec::bias(SAGE1_B, self.hidden),
            ParamSpec::weight(SAGE2_W, self.hidden, 2 * self.hidden),
            ParamSpec::bias(SAGE2_B, self.hidden),
            ParamSpec::weight(MLP1_W, self.mlp_hidden, 2 * self.hidden),
            ParamSpec::bias(MLP1_B, self.mlp_hidden),
            ParamSpec::weight(MLP2_W, 1, self.mlp_hidden),
            ParamSpec::bias(MLP2_B, 1),
        ]
    }

    fn check(&self, params: &ParamStore) -> Result<(), GnnError> {
        let specs = self.specs();
        if params.len() != specs.len() {
            return Err(GnnError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || t.shape() != (spec.rows, spec.cols) {
                return Err(GnnError::ShapeMismatch(format!(
                    "`{name}` {:?}, expected `{}` {:?}",
                    t.shape(),
                    spec.name,
                    (spec.rows, spec.cols)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    pub config_hash: String,
}

/// Trained (or freshly initialized) encoder + decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredictor {
    pub params: ParamStore,
    pub dims: ModelDims,
    pub meta: ModelMeta,
}

/// Per-node output embeddings with the graph's source/target split.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub num_sources: usize,
    pub matrix: NodeMatrix,
}

impl NodeEmbeddings {
    pub fn source(&self, s: usize) -> &[f64] {
        self.matrix.row(s)
    }

    pub fn target(&self, t: usize) -> &[f64] {
        self.matrix.row(self.num_sources + t)
    }

    pub fn num_targets(&self) -> usize {
        self.matrix.rows() - self.num_sources
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub(crate) struct EncodePass {
    l1: LayerPass,
    l2: LayerPass,
}

impl LinkPredictor {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, GnnError> {
        Ok(LinkPredictor {
            params: init_params(&dims.specs(), seed)?,
            dims,
            meta: ModelMeta {
                seed,
                ..Default::default()
            },
        })
    }

    /// Rebuild from checkpoint tensors, inferring the dimensions.
    pub fn from_params(params: ParamStore, meta: ModelMeta) -> Result<Self, GnnError> {
        let w1 = params.require(SAGE1_W)?;
        let m1 = params.require(MLP1_W)?;
        let dims = ModelDims {
            in_dim: w1.cols() / 2,
            hidden: w1.rows(),
            mlp_hidden: m1.rows(),
        };
        dims.check(&params)?;
        Ok(LinkPredictor { params, dims, meta })
    }

    pub fn layer(&self, which: usize) -> SageLayerParams {
        let (w, b, act) = match which {
            1 => (I_S1W, I_S1B, Activation::Relu),
            2 => (I_S2W, I_S2B, Activation::Identity),
            _ => panic!("the encoder has two layers"),
        };
        SageLayerParams {
            weight: self.params.tensor(w).clone(),
            bias: self.params.tensor(b).clone(),
            activation: act,
        }
    }

    /// Output embeddings (`hidden`-wide) for every node of `graph`.
    pub fn encode(
        &self,
        graph: &BipartiteGraph,
        features: &EmbeddingMatrix,
        exec: Execution,
    ) -> Result<NodeEmbeddings, GnnError> {
        let x = NodeMatrix::from_graph(graph, features)?;
        let adj = Adjacency::from_graph(graph);
        self.encode_nodes(&adj, &x, exec)
    }

    pub fn encode_nodes(
        &self,
        adj: &Adjacency,
        x: &NodeMatrix,
        exec: Execution,
    ) -> Result<NodeEmbeddings, GnnError> {
        let pass = encode_pass(&self.params, adj, x, exec)?;
        Ok(NodeEmbeddings {
            num_sources: adj.num_sources(),
            matrix: pass.l2.out,
        })
    }

    /// Link probability for the pair `(h_i, h_j)`.
    pub fn decode_link(&self, h_i: &[f64], h_j: &[f64]) -> Result<f64, GnnError> {
        if h_i.len() != self.dims.hidden || h_j.len() != self.dims.hidden {
            return Err(GnnError::ShapeMismatch(format!(
                "decoder expects {}-wide embeddings, got {} and {}",
                self.dims.hidden,
                h_i.len(),
                h_j.len()
            )));
        }
        Ok(sigmoid(decode_logit(&self.params, h_i, h_j).0))
    }

    pub fn scorer<'a>(&'a self, emb: &'a NodeEmbeddings) -> PairScorer<'a> {
        PairScorer::new(&self.params, emb)
    }
}

pub(crate) fn encode_pass(
    params: &ParamStore,
    adj: &Adjacency,
    x: &NodeMatrix,
    exec: Execution,
) -> Result<EncodePass, GnnError> {
    let l1 = layer_forward(
        params.tensor(I_S1W),
        params.tensor(I_S1B),
        Activation::Relu,
        adj,
        x,
        exec,
    )?;
    let l2 = layer_forward(
        params.tensor(I_S2W),
        params.tensor(I_S2B),
        Activation::Identity,
        adj,
        &l1.out,
        exec,
    )?;
    Ok(EncodePass { l1, l2 })
}

/// First decoder layer split into the source half and the target half.
fn half_products(w: &DenseMatrix, h: &[f64], second_half: bool) -> Vec<f64> {
    let d = h.len();
    (0..w.rows())
        .map(|r| {
            let row = w.row(r);
            let part = if second_half { &row[d..] } else { &row[..d] };
            dot_f32_f64(part, h)
        })
        .collect()
}

fn logit_from_halves(params: &ParamStore, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let b1 = params.tensor(I_M1B).as_slice();
    let w2 = params.tensor(I_M2W).as_slice();
    let pre: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(b1)
        .map(|((&x, &y), &c)| x + y + c as f64)
        .collect();
    let logit = pre
        .iter()
        .zip(w2)
        .map(|(&z, &w)| relu(z) * w as f64)
        .sum::<f64>()
        + params.tensor(I_M2B).as_slice()[0] as f64;
    (logit, pre)
}

/// Decoder logit and first-layer pre-activations for one pair.
fn decode_logit(params: &ParamStore, h_i: &[f64], h_j: &[f64]) -> (f64, Vec<f64>) {
    let w1 = params.tensor(I_M1W);
    let a = half_products(w1, h_i, false);
    let b = half_products(w1, h_j, true);
    logit_from_halves(params, &a, &b)
}

/// Scores many source/target pairs by caching each side's half of the
/// first decoder layer. Identical to [`LinkPredictor::decode_link`].
pub struct PairScorer<'a> {
    params: &'a ParamStore,
    src: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
}

impl<'a> PairScorer<'a> {
    fn new(params: &'a ParamStore, emb: &NodeEmbeddings) -> Self {
        let w1 = params.tensor(I_M1W);
        let src = (0..emb.num_sources)
            .map(|s| half_products(w1, emb.source(s), false))
            .collect();
        let tgt = (0..emb.num_targets())
            .map(|t| half_products(w1, emb.target(t), true))
            .collect();
        PairScorer { params, src, tgt }
    }

    pub fn score(&self, s: usize, t: usize) -> f64 {
        sigmoid(logit_from_halves(self.params, &self.src[s], &self.tgt[t]).0)
    }

    /// Scores of `s` against every target, in target order.
    pub fn scores_for_source(&self, s: usize) -> Vec<f64> {
        (0..self.tgt.len()).map(|t| self.score(s, t)).collect()
    }

    pub fn num_targets(&self) -> usize {
        self.tgt.len()
    }
}

pub fn bce_loss(preds: &[f64], labels: &[f64]) -> Result<f64, GnnError> {
    if preds.len() != labels.len() {
        return Err(GnnError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Mean BCE over `positives` (label 1) and `negatives` (label 0), with
/// message passing over `adj`. When `want_grad` is set, also returns the
/// gradient w.r.t. every parameter.
pub fn link_objective(
    params: &ParamStore,
    adj: &Adjacency,
    x: &NodeMatrix,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    want_grad: bool,
) -> Result<(f64, Option<ParamStore>), GnnError> {
    let pass = encode_pass(params, adj, x, Execution::Sequential)?;
    let h = &pass.l2.out;
    let n = positives.len() + negatives.len();
    if n == 0 {
        return Err(GnnError::EmptyTrainSplit);
    }
    let inv_n = 1.0 / n as f64;
    let hidden = h.cols();
    let mlp_hidden = params.tensor(I_M1W).rows();

    let mut grads: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut d_h = NodeMatrix::zeros(h.rows(), hidden);
    // each node's half of the first decoder layer, computed once
    let w1 = params.tensor(I_M1W);
    let halves: Vec<Vec<f64>> = (0..h.rows())
        .map(|v| half_products(w1, h.row(v), v >= adj.num_sources()))
        .collect();
    // gradient w.r.t. each node's half, pushed through w1 after the loop
    let mut d_half = NodeMatrix::zeros(h.rows(), mlp_hidden);
    let w2 = params.tensor(I_M2W).as_slice();
    let mut loss = 0.0;
    let pairs = positives
        .iter()
        .map(|&p| (p, 1.0))
        .chain(negatives.iter().map(|&p| (p, 0.0)));
    for ((s, t), y) in pairs {
        let (i, j) = (s, adj.target_node(t));
        let (logit, pre) = logit_from_halves(params, &halves[i], &halves[j]);
        let p = sigmoid(logit);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if !want_grad || pc != p {
            continue;
        }
        let g = (p - y) * inv_n;
        grads[I_M2B][0] += g;
        for r in 0..mlp_hidden {
            let z = pre[r];
            if z <= 0.0 {
                continue;
            }
            grads[I_M2W][r] += g * z;
            let da = g * w2[r] as f64;
            grads[I_M1B][r] += da;
            d_half.row_mut(i)[r] += da;
            d_half.row_mut(j)[r] += da;
        }
    }
    if want_grad {
        for v in 0..h.rows() {
            let second = v >= adj.num_sources();
            let offset = if second { hidden } else { 0 };
            let hv = h.row(v);
            for r in 0..mlp_hidden {
                let da = d_half.row(v)[r];
                if da == 0.0 {
                    continue;
                }
                let row = &mut grads[I_M1W][r * 2 * hidden + offset..r * 2 * hidden + offset + hidden];
                for (o, &hk) in row.iter_mut().zip(hv) {
                    *o += da * hk;
                }
                let wrow = &w1.row(r)[offset..offset + hidden];
                for (o, &wk) in d_h.row_mut(v).iter_mut().zip(wrow) {
                    *o += da * wk as f64;
                }
            }
        }
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(GnnError::NonFiniteLoss);
    }
    if !want_grad {
        return Ok((loss, None));
    }

    let mut d_h1 = NodeMatrix::zeros(h.rows(), pass.l1.out.cols());
    {
        let (a, b) = grads.split_at_mut(I_S2B);
        layer_backward(
            params.tensor(I_S2W),
            adj,
            &pass.l1.out,
            &pass.l2,
            Activation::Identity,
            &d_h,
            &mut a[I_S2W],
            &mut b[0],
            Some(&mut d_h1),
        );
    }
    {
        let (a, b) = grads.split_at_mut(I_S1B);
        layer_backward(
            params.tensor(I_S1W),
            adj,
            x,
            &pass.l1,
            Activation::Relu,
            &d_h1,
            &mut a[I_S1W],
            &mut b[0],
            None,
        );
    }

    let mut out = params.zeros_like();
    for (i, g) in grads.into_iter().enumerate() {
        for (o, v) in out.tensor_mut(i).as_mut_slice().iter_mut().zip(g) {
            *o = v as f32;
        }
    }
    Ok((loss, Some(out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_adj() -> Adjacency {
        // node 0 <-> node 1
        Adjacency::from_lists(1, vec![vec![1], vec![0]])
    }

    #[test]
    fn mean_of_two_neighbors() {
        let x = NodeMatrix::from_rows(&[vec![9.0, 9.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let adj = Adjacency::from_lists(1, vec![vec![1, 2], vec![0], vec![0]]);
        assert_eq!(mean_aggregate(0, &adj, &x), vec![0.5, 0.5]);
        assert_eq!(mean_aggregate(1, &adj, &x), vec![9.0, 9.0]);
        let flipped = Adjacency::from_lists(1, vec![vec![2, 1], vec![0], vec![0]]);
        assert_eq!(mean_aggregate(0, &flipped, &x), mean_aggregate(0, &adj, &x));
    }

    #[test]
    fn isolated_node_aggregates_to_zero() {
        let x = NodeMatrix::from_rows(&[vec![2.0, 3.0]]);
        let adj = Adjacency::from_lists(1, vec![vec![]]);
        assert_eq!(mean_aggregate(0, &adj, &x), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_sage_layer() {
        let layer = SageLayerParams {
            weight: DenseMatrix::from_vec(2, 4, vec![1., 0., 1., 0., 0., 1., 0., 1.]).unwrap(),
            bias: DenseMatrix::zeros(1, 2),
            activation: Activation::Relu,
        };
        let x = NodeMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = sage_forward(&layer, &two_node_adj(), &x).unwrap();
        // node 0: concat [1,0,0,1] -> [1,1]
        assert_eq!(out.row(0), &[1.0, 1.0]);

        let zeros = NodeMatrix::zeros(2, 2);
        let out = sage_forward(&layer, &two_node_adj(), &zeros).unwrap();
        assert!(out.row(0).iter().chain(out.row(1)).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = SageLayerParams {
            weight: DenseMatrix::zeros(2, 6),
            bias: DenseMatrix::zeros(1, 2),
            activation: Activation::Identity,
        };
        let x = NodeMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            sage_forward(&layer, &two_node_adj(), &x),
            Err(GnnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_decoder_gives_one_half() {
        let mut m = LinkPredictor::init(ModelDims::new(4, 3), 0).unwrap();
        for name in [MLP1_W, MLP1_B, MLP2_W, MLP2_B] {
            m.params.get_mut(name).unwrap().as_mut_slice().fill(0.0);
        }
        assert_eq!(m.decode_link(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 5.0]).unwrap(), 0.5);
        assert!(m.decode_link(&[1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn bce_closed_forms() {
        assert!(bce_loss(&[1.0 - 1e-7], &[1.0]).unwrap() < 1e-6);
        let l = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_loss(&[0.0], &[1.0]).unwrap();
        assert!((l - 16.118_095_650_958_32).abs() < 1e-9, "{l}");
        assert!(matches!(bce_loss(&[0.5], &[]), Err(GnnError::LengthMismatch(1, 0))));
    }

    #[test]
    fn scorer_matches_decode_link() {
        let m = LinkPredictor::init(ModelDims::new(3, 4), 5).unwrap();
        let x = NodeMatrix::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.0, 1.0, -0.5], vec![0.3, 0.3, 0.3]]);
        let adj = Adjacency::from_lists(2, vec![vec![2], vec![], vec![0]]);
        let emb = m.encode_nodes(&adj, &x, Execution::Sequential).unwrap();
        let scorer = m.scorer(&emb);
        for s in 0..2 {
            let direct = m.decode_link(emb.source(s), emb.target(0)).unwrap();
            assert_eq!(scorer.score(s, 0), direct);
            assert!(direct > 0.0 && direct < 1.0);
        }
    }
}
