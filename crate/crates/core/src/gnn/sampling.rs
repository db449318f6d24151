use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GnnError;
use crate::graph::BipartiteGraph;

/// Uniformly sampled distinct source/target pairs that are not edges of
/// `graph`. Augmentation duplicates never appear as endpoints.
pub fn sample_negatives<R: Rng>(
    graph: &BipartiteGraph,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, GnnError> {
    let sources: Vec<usize> = graph.real_sources().collect();
    let t_count = graph.num_targets();
    let real_edges = graph.edges().filter(|&(s, _)| !graph.is_duplicate(s)).count();
    let available = sources.len() * t_count - real_edges;
    if count > available {
        return Err(GnnError::ExhaustedNonEdges {
            requested: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count * 2 > available {
        // dense request: enumerate and take a random prefix
        let mut all: Vec<(usize, usize)> = sources
            .iter()
            .flat_map(|&s| (0..t_count).map(move |t| (s, t)))
            .filter(|&(s, t)| !graph.has_edge(s, t))
            .collect();
        let (picked, _) = all.partial_shuffle(rng, count);
        return Ok(picked.to_vec());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = sources[rng.gen_range(0..sources.len())];
        let t = rng.gen_range(0..t_count);
        if !graph.has_edge(s, t) && seen.insert((s, t)) {
            out.push((s, t));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self, GnnError> {
        let f = SplitFractions { train, valid, test };
        f.validate()?;
        Ok(f)
    }

    /// Everything in the training split.
    pub fn all_train() -> Self {
        SplitFractions {
            train: 1.0,
            valid: 0.0,
            test: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GnnError::InvalidFractions(format!(
                "{}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.valid, self.test
            )));
        }
        Ok(())
    }
}

/// Disjoint train/valid/test edges plus fixed negatives for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub seed: u64,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub valid_negatives: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
}

impl EdgeSplit {
    /// The graph restricted to training edges.
    pub fn train_graph(&self, graph: &BipartiteGraph) -> Result<BipartiteGraph, GnnError> {
        Ok(graph.with_edges(self.train.iter().copied())?)
    }
}

/// Shuffle the edge set with `seed` and cut it by `fractions`. Validation and
/// test negatives are drawn from non-edges of the full graph, one per positive.
pub fn split_edges(
    graph: &BipartiteGraph,
    fractions: SplitFractions,
    seed: u64,
) -> Result<EdgeSplit, GnnError> {
    fractions.validate()?;
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    let n = edges.len();
    let n_valid = (fractions.valid * n as f64).round() as usize;
    let n_test = (fractions.test * n as f64).round() as usize;
    if n == 0 || n_valid + n_test >= n {
        return Err(GnnError::TooFewEdges(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let test: Vec<_> = edges[..n_test].to_vec();
    let valid: Vec<_> = edges[n_test..n_test + n_valid].to_vec();
    let mut train: Vec<_> = edges[n_test + n_valid..].to_vec();
    train.sort_unstable();
    let valid_negatives = sample_negatives(graph, valid.len(), &mut rng)?;
    let test_negatives = sample_negatives(graph, test.len(), &mut rng)?;
    Ok(EdgeSplit {
        seed,
        train,
        valid,
        test,
        valid_negatives,
        test_negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n_edges: usize) -> BipartiteGraph {
        let s: Vec<String> = (0..n_edges).map(|i| format!("s{i}")).collect();
        let t: Vec<String> = (0..n_edges).map(|i| format!("t{i}")).collect();
        BipartiteGraph::from_parts("a", "b", s, t, (0..n_edges).map(|i| (i, i))).unwrap()
    }

    #[test]
    fn ten_edges_split_eight_one_one() {
        let g = path_graph(10);
        let sp = split_edges(&g, SplitFractions::default(), 0).unwrap();
        assert_eq!((sp.train.len(), sp.valid.len(), sp.test.len()), (8, 1, 1));
        let mut all: Vec<_> = sp.train.iter().chain(&sp.valid).chain(&sp.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, g.edges().collect::<Vec<_>>());
        assert_eq!(sp, split_edges(&g, SplitFractions::default(), 0).unwrap());
        for &(s, t) in sp.valid_negatives.iter().chain(&sp.test_negatives) {
            assert!(!g.has_edge(s, t));
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(SplitFractions::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitFractions::new(0.8, 0.2, 0.0).is_ok());
    }

    #[test]
    fn too_few_edges() {
        let g = path_graph(1);
        assert!(matches!(
            split_edges(&g, SplitFractions::new(0.0, 0.5, 0.5).unwrap(), 0),
            Err(GnnError::TooFewEdges(1))
        ));
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let g = BipartiteGraph::from_parts("a", "b", ["s0", "s1"], ["t0"], [(0, 0), (1, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_negatives(&g, 1, &mut rng),
            Err(GnnError::ExhaustedNonEdges { requested: 1, available: 0 })
        ));
    }

    #[test]
    fn negatives_are_fresh_distinct_and_reproducible() {
        let g = path_graph(12);
        let draw = |seed| sample_negatives(&g, 30, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = draw(4);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|&(s, t)| !g.has_edge(s, t)));
        let uniq: BTreeSet<_> = a.iter().collect();
        assert_eq!(uniq.len(), 30);
        assert_eq!(a, draw(4));
    }

    #[test]
    fn duplicates_never_sampled() {
        let mut g = BipartiteGraph::from_parts("a", "b", ["s0", "s1"], ["t0", "t1", "t2"], [(0, 0)]).unwrap();
        let d = g.add_duplicate_source("s0#dup1@t0", 0).unwrap();
        g.add_edge(d, 0).unwrap();
        let all = sample_negatives(&g, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(all.iter().all(|&(s, _)| s != d));
        assert!(sample_negatives(&g, 6, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
