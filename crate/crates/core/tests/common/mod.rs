//! Synthetic graphs and features shared by the integration tests.
#![allow(dead_code)]

use idiomce::graph::BipartiteGraph;
use idiomce::ingest::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

pub fn unit(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
    v.iter().map(|x| x / n).collect()
}

/// `center + noise * N(0, I/dim)`, normalized.
pub fn perturbed(rng: &mut ChaCha8Rng, center: &[f32], noise: f64) -> Vec<f32> {
    let scale = noise / (center.len() as f64).sqrt();
    let v: Vec<f32> = center
        .iter()
        .map(|&c| c + (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    unit(&v)
}

pub struct Planted {
    pub graph: BipartiteGraph,
    pub features: EmbeddingMatrix,
    pub source_community: Vec<usize>,
    pub target_community: Vec<usize>,
}

pub fn source_id(i: usize) -> String {
    format!("en:s{i:03}")
}

pub fn target_id(j: usize) -> String {
    format!("hi:t{j:03}")
}

/// `communities` blocks of `per_side` sources and `per_side` targets.
/// Each intra-block pair is an edge with probability `p_in`; node features
/// are the block's unit center plus Gaussian noise of norm about `noise`.
pub fn planted_communities(
    seed: u64,
    communities: usize,
    per_side: usize,
    p_in: f64,
    noise: f64,
    dim: usize,
) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..communities).map(|_| unit(&gaussian(&mut rng, dim))).collect();
    let n = communities * per_side;
    let source_community: Vec<usize> = (0..n).map(|i| i / per_side).collect();
    let target_community = source_community.clone();
    let mut features = EmbeddingMatrix::new(dim);
    for i in 0..n {
        features.push(source_id(i), perturbed(&mut rng, &centers[source_community[i]], noise)).unwrap();
    }
    for j in 0..n {
        features.push(target_id(j), perturbed(&mut rng, &centers[target_community[j]], noise)).unwrap();
    }
    let mut edges = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if source_community[s] == target_community[t] && rng.gen_bool(p_in) {
                edges.push((s, t));
            }
        }
    }
    let graph = BipartiteGraph::from_parts(
        "en",
        "hi",
        (0..n).map(source_id),
        (0..n).map(target_id),
        edges,
    )
    .unwrap();
    Planted {
        graph,
        features,
        source_community,
        target_community,
    }
}

/// Every target links to exactly `degrees[j % degrees.len()]` random sources of
/// its block, so observed sparseness in a training split mostly reflects
/// held-out edges rather than low true popularity.
pub fn sparse_targets(seed: u64, communities: usize, per_side: usize, degrees: &[usize], noise: f64, dim: usize) -> Planted {
    let mut planted = planted_communities(seed, communities, per_side, 0.0, noise, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ba5e);
    let n = communities * per_side;
    let mut edges = Vec::new();
    for t in 0..n {
        let block: Vec<usize> = (0..n).filter(|&s| planted.source_community[s] == planted.target_community[t]).collect();
        let k = degrees[t % degrees.len()].min(block.len());
        for i in rand::seq::index::sample(&mut rng, block.len(), k).iter() {
            edges.push((block[i], t));
        }
    }
    planted.graph = planted.graph.with_edges(edges).unwrap();
    planted
}
