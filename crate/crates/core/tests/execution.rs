//! Sequential and parallel execution must agree exactly.

mod common;

use idiomce::eval::test_ranks;
use idiomce::gnn::{train_link_predictor, TrainConfig};
use idiomce::ingest::IdiomRecord;
use idiomce::kg::{build_graph, KgConfig};
use idiomce::Execution;

fn records(ids: &[String], lang: &str) -> Vec<IdiomRecord> {
    ids.iter().map(|id| IdiomRecord::new(id, lang, format!("idiom {id}"))).collect()
}

#[test]
fn graph_building_matches() {
    let planted = common::planted_communities(3, 4, 12, 0.5, 0.4, 32);
    let src = records(planted.graph.source_ids(), "en");
    let tgt = records(planted.graph.target_ids(), "hi");
    let build = |exec| {
        let config = KgConfig { exec, ..KgConfig::default() };
        build_graph(&src, &tgt, &planted.features, &config).unwrap()
    };
    let seq = build(Execution::Sequential);
    assert!(seq.num_edges() > 0);
    assert_eq!(seq, build(Execution::Parallel));
}

#[test]
fn training_and_ranking_match() {
    let planted = common::planted_communities(5, 3, 10, 0.6, 0.4, 32);
    let train = |exec| {
        let config = TrainConfig { epochs: 8, runs: 3, hidden: 16, lr: 1e-2, exec, ..TrainConfig::default() };
        train_link_predictor(&planted.graph, &planted.features, &config).unwrap()
    };
    let seq = train(Execution::Sequential);
    let par = train(Execution::Parallel);
    assert_eq!(seq.best_run, par.best_run);
    assert_eq!(seq.runs, par.runs);
    assert_eq!(seq.best, par.best);

    let graph = &planted.graph;
    let encode = |exec| seq.best.encode(graph, &planted.features, exec).unwrap();
    let emb = encode(Execution::Sequential);
    assert_eq!(emb, encode(Execution::Parallel));

    let scorer = seq.best.scorer(&emb);
    let edges: Vec<(usize, usize)> = graph.edges().collect();
    let ranks = |exec| test_ranks(&scorer, graph.target_ids(), &edges, graph.edge_set(), true, exec);
    assert_eq!(ranks(Execution::Sequential), ranks(Execution::Parallel));
}
