//! Property tests for the core invariants.

mod common;

use std::collections::{BTreeSet, VecDeque};

use approx::assert_abs_diff_eq;
use idiomce::contrastive::{
    attach_unseen, connected_components, mine_triplets, AttachConfig, HeadIndex, ProjectionHead,
};
use idiomce::eval::{auc, auc_rank_statistic, filtered_rank, hits_from_ranks};
use idiomce::gnn::{sample_negatives, LinkPredictor, ModelDims};
use idiomce::graph::{graph_from_json, graph_to_json, BipartiteGraph};
use idiomce::ingest::{parse_idiom_str, EmbeddingMatrix, IdiomRecord};
use idiomce::kg::{compute_moments, select_edges, KgConfig};
use idiomce::nodedup::{augment_graph, classify_nodes, AugmentConfig};
use idiomce::pipeline::Retriever;
use idiomce::Execution;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_strategy(max_side: usize) -> impl Strategy<Value = BipartiteGraph> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(s, t)| {
        proptest::collection::btree_set((0..s, 0..t), 0..=s * t).prop_map(move |edges| {
            BipartiteGraph::from_parts(
                "en",
                "hi",
                (0..s).map(common::source_id),
                (0..t).map(common::target_id),
                edges,
            )
            .unwrap()
        })
    })
}

fn features_for(graph: &BipartiteGraph, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = EmbeddingMatrix::new(dim);
    for id in graph.source_ids().iter().chain(graph.target_ids()) {
        m.push(id.clone(), common::gaussian(&mut rng, dim)).unwrap();
    }
    m
}

/// Component label per source by breadth-first search over the bipartite graph.
fn bfs_source_components(graph: &BipartiteGraph) -> Vec<usize> {
    let (src, tgt) = graph.adjacency();
    let mut label = vec![usize::MAX; graph.num_sources()];
    let mut next = 0;
    for start in graph.real_sources() {
        if label[start] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        label[start] = next;
        while let Some(s) = queue.pop_front() {
            for &t in &src[s] {
                for &s2 in &tgt[t] {
                    if !graph.is_duplicate(s2) && label[s2] == usize::MAX {
                        label[s2] = next;
                        queue.push_back(s2);
                    }
                }
            }
        }
        next += 1;
    }
    label
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_bytes_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-10.0f32..10.0, 5), 0..20)) {
        let m = EmbeddingMatrix::from_rows(5, rows.into_iter().enumerate().map(|(i, r)| (format!("x:{i}"), r))).unwrap();
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), m.to_bytes());
        prop_assert_eq!(back.ids(), m.ids());
    }

    #[test]
    fn idiom_records_round_trip(texts in proptest::collection::vec("[a-z\\u{0900}-\\u{097f}][a-z \\u{0900}-\\u{097f}\"]{0,18}[a-z\\u{0900}-\\u{097f}]", 1..10)) {
        let records: Vec<IdiomRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut r = IdiomRecord::new(format!("hi:{i}"), "hi", t.clone());
                r.context = t.chars().rev().collect();
                r
            })
            .collect();
        let jsonl: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        prop_assert_eq!(parse_idiom_str(&jsonl).unwrap(), records);
    }

    #[test]
    fn graph_json_round_trip_keeps_duplicates(graph in graph_strategy(6)) {
        let aug = augment_graph(&graph, AugmentConfig::default()).graph;
        let json = graph_to_json(&aug);
        let back = graph_from_json(&json).unwrap();
        prop_assert_eq!(&back, &aug);
        prop_assert_eq!(graph_to_json(&back), json);
    }

    #[test]
    fn moments_are_shift_equivariant(xs in proptest::collection::vec(-1.0f64..1.0, 4..60), shift in -5.0f64..5.0) {
        let a = compute_moments(&xs);
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        let b = compute_moments(&xs.iter().map(|x| x + shift).collect::<Vec<_>>()).unwrap();
        prop_assert!(a.std >= 0.0 && a.q1 <= a.q3);
        assert_abs_diff_eq!(b.mean, a.mean + shift, epsilon = 1e-9);
        assert_abs_diff_eq!(b.std, a.std, epsilon = 1e-9);
        assert_abs_diff_eq!(b.iqr, a.iqr, epsilon = 1e-9);
        assert_abs_diff_eq!(b.q3, a.q3 + shift, epsilon = 1e-9);
    }

    #[test]
    fn raising_a_fixed_cutoff_only_removes_edges(
        sims in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..8),
        lo in -1.0f64..1.0,
        gap in 0.0f64..1.0,
    ) {
        let (loose, _) = select_edges(&sims, &KgConfig::fixed(lo)).unwrap();
        let (strict, _) = select_edges(&sims, &KgConfig::fixed(lo + gap)).unwrap();
        let loose: BTreeSet<_> = loose.into_iter().collect();
        prop_assert!(strict.iter().all(|e| loose.contains(e)));
    }

    #[test]
    fn calibrated_edges_clear_their_row_rule(sims in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 10), 1..8)) {
        let (edges, rules) = select_edges(&sims, &KgConfig::default()).unwrap();
        for &(s, t) in &edges {
            let rule = rules[s].expect("an edge implies a calibrated row");
            prop_assert!(sims[s][t] >= rule.cutoff());
        }
    }

    #[test]
    fn auc_matches_rank_statistic(
        pos in proptest::collection::vec(0u8..20, 1..30),
        neg in proptest::collection::vec(0u8..20, 1..30),
    ) {
        // coarse values force ties
        let p: Vec<f64> = pos.iter().map(|&x| x as f64 / 20.0).collect();
        let n: Vec<f64> = neg.iter().map(|&x| x as f64 / 20.0).collect();
        assert_abs_diff_eq!(auc(&p, &n).unwrap(), auc_rank_statistic(&p, &n).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn hits_is_monotone_in_k(ranks in proptest::collection::vec(1usize..50, 1..40), k in 1usize..50) {
        prop_assert!(hits_from_ranks(&ranks, k).unwrap() <= hits_from_ranks(&ranks, k + 1).unwrap());
        prop_assert_eq!(hits_from_ranks(&ranks, 50).unwrap(), 100.0);
    }

    #[test]
    fn filtering_a_known_positive_never_worsens_rank(
        scores in proptest::collection::vec(0u8..10, 2..20),
        pick in any::<prop::sample::Index>(),
        extra in any::<prop::sample::Index>(),
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let ids: Vec<String> = (0..scores.len()).map(common::target_id).collect();
        let t = pick.index(scores.len());
        let c = extra.index(scores.len());
        prop_assume!(c != t);
        let before = filtered_rank(&scores, &ids, t, &BTreeSet::new(), true);
        let after = filtered_rank(&scores, &ids, t, &BTreeSet::from([c]), true);
        prop_assert!(after <= before);
        prop_assert_eq!(before, filtered_rank(&scores, &ids, t, &BTreeSet::from([c]), false));
    }

    #[test]
    fn negatives_are_distinct_real_non_edges(graph in graph_strategy(7), seed in any::<u64>(), frac in 0.0f64..1.0) {
        let aug = augment_graph(&graph, AugmentConfig::default()).graph;
        let available = graph.num_sources() * graph.num_targets() - graph.num_edges();
        let count = (frac * available as f64) as usize;
        let neg = sample_negatives(&aug, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(neg.len(), count);
        prop_assert_eq!(neg.iter().collect::<BTreeSet<_>>().len(), count);
        for &(s, t) in &neg {
            prop_assert!(!aug.is_duplicate(s) && !aug.has_edge(s, t));
        }
    }

    #[test]
    fn augmentation_only_touches_cold_targets(graph in graph_strategy(6), delta in 1usize..5, copies in 1usize..4) {
        let config = AugmentConfig { delta, copies };
        let aug = augment_graph(&graph, config);
        let part = classify_nodes(&graph, delta);
        let degrees = graph.target_degrees();
        let expected: usize = part.cold.iter().map(|&t| degrees[t] * copies).sum();
        prop_assert_eq!(aug.duplicates.len(), expected);
        prop_assert!(graph.edges().all(|(s, t)| aug.graph.has_edge(s, t)));
        for (&d, &orig) in &aug.duplicates {
            prop_assert!(!aug.graph.is_duplicate(orig));
            let (src, _) = aug.graph.adjacency();
            prop_assert_eq!(src[d].len(), 1);
            prop_assert!(part.cold.contains(&src[d][0]));
            prop_assert!(graph.has_edge(orig, src[d][0]));
        }
    }

    #[test]
    fn mined_triplets_are_valid(graph in graph_strategy(8), seed in any::<u64>()) {
        let labels = bfs_source_components(&graph);
        let lib = connected_components(&graph);
        for a in 0..graph.num_sources() {
            for b in 0..graph.num_sources() {
                prop_assert_eq!(labels[a] == labels[b], lib[a] == lib[b]);
            }
        }
        if let Ok(triplets) = mine_triplets(&graph, 3, &mut ChaCha8Rng::seed_from_u64(seed)) {
            let (src, _) = graph.adjacency();
            for tr in triplets {
                prop_assert!(tr.anchor != tr.positive);
                prop_assert!(src[tr.anchor].iter().any(|t| src[tr.positive].contains(t)));
                prop_assert!(labels[tr.anchor] != labels[tr.negative]);
            }
        }
    }

    #[test]
    fn candidate_sets_are_sorted_and_unique(graph in graph_strategy(8), seed in 0u64..1000, k in 1usize..10) {
        let features = features_for(&graph, 6, seed);
        let model = LinkPredictor::init(ModelDims::new(6, 4), seed).unwrap();
        let retriever = Retriever::new(&model, &graph, &features, Execution::Sequential).unwrap();
        let set = retriever.topk_for_node(0, k).unwrap();
        prop_assert_eq!(set.len(), k.min(graph.num_targets()));
        prop_assert_eq!(set.ids().collect::<BTreeSet<_>>().len(), set.len());
        for w in set.candidates.windows(2) {
            prop_assert!(
                w[0].probability > w[1].probability
                    || (w[0].probability == w[1].probability && w[0].target_id < w[1].target_id)
            );
        }
    }

    #[test]
    fn attaching_an_unseen_idiom_leaves_the_input_graph_alone(graph in graph_strategy(6), seed in 0u64..1000) {
        let features = features_for(&graph, 6, seed);
        let head = ProjectionHead::init(6, 4, 1.0, seed).unwrap();
        let index = HeadIndex::build(&head, &graph, &features).unwrap();
        let before = graph.clone();
        let emb = features.row(0).to_vec();
        let config = AttachConfig { tau: -1.0, ..AttachConfig::default() };
        let record = IdiomRecord::new("en:new", "en", "fresh idiom");
        let out = attach_unseen(&record, &emb, &graph, &head, &index, &config, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&graph, &before);
        if let Ok(att) = out {
            prop_assert_eq!(att.graph.num_sources(), graph.num_sources() + 1);
            prop_assert!(graph.edges().all(|(s, t)| att.graph.has_edge(s, t)));
            prop_assert!(att.targets.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(att.targets.len() <= config.max_targets);
            prop_assert!(att.targets.iter().all(|&t| att.graph.has_edge(att.node, t)));
        }
    }
}
