use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use idiomce::eval::test_ranks;
use idiomce::gnn::{Adjacency, LinkPredictor, ModelDims, NodeMatrix};
use idiomce::graph::BipartiteGraph;
use idiomce::ingest::EmbeddingMatrix;
use idiomce::kg::similarity_matrix;
use idiomce::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DIM: usize = 768;
const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..DIM).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
        .collect()
}

fn fixture(n: usize) -> (BipartiteGraph, EmbeddingMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut edges = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if rng.gen_bool(0.05) {
                edges.push((s, t));
            }
        }
    }
    let graph = BipartiteGraph::from_parts(
        "en",
        "hi",
        (0..n).map(|i| format!("en:{i}")),
        (0..n).map(|i| format!("hi:{i}")),
        edges,
    )
    .unwrap();
    let rows = gaussian_rows(&mut rng, 2 * n);
    let ids = graph.source_ids().iter().chain(graph.target_ids()).cloned();
    let features = EmbeddingMatrix::from_rows(DIM, ids.zip(rows)).unwrap();
    (graph, features)
}

fn bench_similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let src = gaussian_rows(&mut rng, 200);
    let tgt = gaussian_rows(&mut rng, 200);
    let src: Vec<&[f32]> = src.iter().map(Vec::as_slice).collect();
    let tgt: Vec<&[f32]> = tgt.iter().map(Vec::as_slice).collect();
    let mut group = c.benchmark_group("similarity_matrix_200x200");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| similarity_matrix(&src, &tgt, m).unwrap())
        });
    }
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let (graph, features) = fixture(200);
    let model = LinkPredictor::init(ModelDims::new(DIM, 64), 0).unwrap();
    let x = NodeMatrix::from_graph(&graph, &features).unwrap();
    let adj = Adjacency::from_graph(&graph);
    let mut group = c.benchmark_group("encode_400_nodes");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| model.encode_nodes(&adj, &x, m).unwrap())
        });
    }
    group.finish();
}

fn bench_ranking(c: &mut Criterion) {
    let (graph, features) = fixture(200);
    let model = LinkPredictor::init(ModelDims::new(DIM, 64), 0).unwrap();
    let emb = model.encode(&graph, &features, Execution::Sequential).unwrap();
    let scorer = model.scorer(&emb);
    let test: Vec<(usize, usize)> = graph.edges().take(200).collect();
    let mut group = c.benchmark_group("filtered_ranks_200_edges");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| test_ranks(&scorer, graph.target_ids(), &test, graph.edge_set(), true, m))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_similarity, bench_encode, bench_ranking
}
criterion_main!(benches);
