use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use idiomce::contrastive::{attach_unseen, mine_triplets, train_head, HeadIndex, ProjectionHead};
use idiomce::eval::{csv_table, hits_at_k, link_auc, markdown_table, run_ablation, MetricReport, TestMetrics};
use idiomce::gnn::{load_model, save_model, split_edges, train_link_predictor, LinkPredictor, ModelSidecar};
use idiomce::graph::{load_graph, save_graph, BipartiteGraph};
use idiomce::ingest::{load_embeddings, parse_idiom_records, Dataset, IdiomRecord};
use idiomce::kg::build_graph;
use idiomce::nodedup::augment_graph;
use idiomce::pipeline::{
    pivot_retrieve, read_batch, retrieve_unseen, translate_batch, write_jsonl_atomic, CandidateSet, DecodingParams,
    LlmProvider, MockProvider, ProviderError, Retriever, TemplateSet, Translator, UnseenContext,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_manifest, Settings};
use crate::{CliError, Command};

pub fn dispatch(command: &Command, s: &Settings) -> Result<(), CliError> {
    match command {
        Command::BuildGraph { out } => build(s, out.as_deref()),
        Command::Augment { out } => augment(s, out),
        Command::TrainGnn { out } => train_gnn(s, out.as_deref()),
        Command::TrainContrastive { out } => train_contrastive(s, out.as_deref()),
        Command::Attach {
            idiom,
            idioms,
            embeddings,
            out,
        } => attach(s, idiom, idioms.as_deref().zip(embeddings.as_deref()), out),
        Command::Predict { source, k, out } => predict(s, source, k.unwrap_or(s.k), out.as_deref()),
        Command::PivotPredict {
            source,
            pivot_manifest,
            pivot_graph,
            pivot_model,
            k_pivot,
            k,
            out,
        } => {
            let pivot = Stage {
                manifest: pivot_manifest.clone(),
                graph: pivot_graph.clone(),
                model: pivot_model.clone(),
            };
            let ks = (k_pivot.unwrap_or(s.k_pivot), k.unwrap_or(s.k));
            pivot_predict(s, source, &pivot, ks, out.as_deref())
        }
        Command::Translate {
            input,
            out,
            provider,
            templates,
            k,
        } => translate(s, input, out, provider, templates.as_deref(), k.unwrap_or(s.k)),
        Command::Eval { split_seed, k, csv } => eval(s, *split_seed, k.as_ref().map(|c| c.0.as_slice()), csv.as_deref()),
        Command::Ablate { k, out } => ablate(s, k.unwrap_or(s.k), out.as_deref()),
    }
}

/// Dataset, graph and (optionally) model locations of one language pair.
struct Stage {
    manifest: PathBuf,
    graph: Option<PathBuf>,
    model: PathBuf,
}

struct Loaded {
    data: Dataset,
    graph: BipartiteGraph,
}

fn load_data(manifest: &Path) -> Result<Dataset, CliError> {
    Ok(load_manifest(manifest)?.load()?)
}

fn load_stage(manifest: &Path, graph: Option<&Path>) -> Result<Loaded, CliError> {
    let data = load_data(manifest)?;
    let path = match graph {
        Some(g) => g.to_path_buf(),
        None => data
            .manifest
            .graph_file
            .clone()
            .unwrap_or_else(|| PathBuf::from("graph.json")),
    };
    let graph = load_graph(&path)?;
    graph.check_features(&data.text_embeddings)?;
    log::info!(
        "graph {}: {} sources, {} targets, {} edges",
        path.display(),
        graph.num_sources(),
        graph.num_targets(),
        graph.num_edges()
    );
    Ok(Loaded { data, graph })
}

fn load(s: &Settings) -> Result<Loaded, CliError> {
    load_stage(&s.paths.manifest, s.paths.graph.as_deref())
}

fn load_predictor(path: &Path) -> Result<LinkPredictor, CliError> {
    let (model, sidecar) = load_model(path)?;
    if let Some(sc) = sidecar {
        log::info!("model {}: seed {}, {} epochs, config {}", path.display(), sc.seed, sc.epochs, sc.config_hash);
    }
    Ok(model)
}

fn idiom_index(data: &Dataset) -> HashMap<String, IdiomRecord> {
    data.source.iter().chain(&data.target).map(|r| (r.id.clone(), r.clone())).collect()
}

fn build(s: &Settings, out: Option<&Path>) -> Result<(), CliError> {
    let data = load_data(&s.paths.manifest)?;
    let graph = build_graph(&data.source, &data.target, &data.cultural_embeddings, &s.kg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| s.paths.graph_for(&data.manifest));
    save_graph(&graph, &path)?;
    println!(
        "{} sources, {} targets, {} edges -> {}",
        graph.num_sources(),
        graph.num_targets(),
        graph.num_edges(),
        path.display()
    );
    Ok(())
}

fn augment(s: &Settings, out: &Path) -> Result<(), CliError> {
    let Loaded { graph, .. } = load(s)?;
    let cfg = s.train.augment.unwrap_or_default();
    let aug = augment_graph(&graph, cfg);
    save_graph(&aug.graph, out)?;
    println!(
        "{} cold targets (degree < {}), {} duplicate sources, {} edges -> {}",
        aug.partition.cold.len(),
        cfg.delta,
        aug.duplicates.len(),
        aug.graph.num_edges(),
        out.display()
    );
    Ok(())
}

fn train_gnn(s: &Settings, out: Option<&Path>) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let outcome = train_link_predictor(&graph, &data.text_embeddings, &s.train)?;
    let sidecar = ModelSidecar {
        seed: outcome.best.meta.seed,
        epochs: s.train.epochs,
        config_hash: s.train.config_hash(),
        split_seed: Some(outcome.splits[outcome.best_run].seed),
        config: Some(s.train.clone()),
        metrics: Some(outcome.summary.clone()),
    };
    let path = out.unwrap_or(&s.paths.model);
    save_model(&outcome.best, &sidecar, path)?;
    print!("{}", markdown_table(&[outcome.summary], &s.train.hits_k));
    println!("best run {} -> {}", outcome.best_run, path.display());
    Ok(())
}

fn train_contrastive(s: &Settings, out: Option<&Path>) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let triplets = mine_triplets(&graph, s.head.per_anchor, &mut rng)?;
    let trained = train_head(&graph, &triplets, &data.text_embeddings, &s.head)?;
    let default = PathBuf::from("head.idcm");
    let path = out.or(s.paths.head.as_deref()).unwrap_or(&default);
    trained.head.save(path)?;
    println!(
        "{} triplets, loss {:.4} -> {:.4} -> {}",
        triplets.len(),
        trained.initial_loss,
        trained.losses.last().copied().unwrap_or(trained.initial_loss),
        path.display()
    );
    Ok(())
}

fn require_head(s: &Settings) -> Result<ProjectionHead, CliError> {
    let path = s
        .paths
        .head
        .as_deref()
        .ok_or_else(|| CliError::usage("--head is required for idioms outside the graph"))?;
    Ok(ProjectionHead::load(path)?)
}

fn attach(s: &Settings, id: &str, extra: Option<(&Path, &Path)>, out: &Path) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let head = require_head(s)?;
    let (record, embedding) = match extra {
        Some((records, emb)) => {
            let records = parse_idiom_records(records)?;
            let emb = load_embeddings(emb)?;
            let r = records.into_iter().find(|r| r.id == id);
            (r, emb.get(id).map(<[f32]>::to_vec))
        }
        None => (
            idiom_index(&data).remove(id),
            data.text_embeddings.get(id).map(<[f32]>::to_vec),
        ),
    };
    let (record, embedding) = record
        .zip(embedding)
        .ok_or_else(|| CliError::domain(format!("idiom `{id}` has no record or embedding")))?;
    let index = HeadIndex::build(&head, &graph, &data.text_embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let att = attach_unseen(&record, &embedding, &graph, &head, &index, &s.attach, &mut rng)?;
    save_graph(&att.graph, out)?;
    for &(n, cos) in &att.neighbors {
        println!("neighbor {} cos {cos:.4}", graph.source_id(n));
    }
    for &t in &att.targets {
        println!("attached {}", att.graph.target_id(t));
    }
    println!("-> {}", out.display());
    Ok(())
}

fn print_candidates(set: &CandidateSet, idioms: &HashMap<String, IdiomRecord>) {
    println!("rank\ttarget\tprobability\ttext");
    for (i, c) in set.candidates.iter().enumerate() {
        let text = idioms.get(&c.target_id).map_or("", |r| r.text.as_str());
        println!("{}\t{}\t{:.6}\t{}", i + 1, c.target_id, c.probability, text);
    }
}

fn predict(s: &Settings, source: &str, k: usize, out: Option<&Path>) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let model = load_predictor(&s.paths.model)?;
    let retriever = Retriever::new(&model, &graph, &data.text_embeddings, s.exec)?;
    let idioms = idiom_index(&data);
    let set = if graph.source_index(source).is_some() {
        retriever.retrieve_topk(source, k)?
    } else {
        let record = idioms
            .get(source)
            .ok_or_else(|| CliError::domain(format!("unknown idiom `{source}`")))?;
        let emb = data
            .text_embeddings
            .get(source)
            .ok_or_else(|| CliError::domain(format!("idiom `{source}` has no embedding")))?;
        let head = require_head(s)?;
        let index = HeadIndex::build(&head, &graph, &data.text_embeddings)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        log::info!("`{source}` is not in the graph; attaching it first");
        retrieve_unseen(&retriever, record, emb, &head, &index, &s.attach, k, &mut rng)?.candidates
    };
    print_candidates(&set, &idioms);
    if let Some(p) = out {
        write_jsonl_atomic(p, std::slice::from_ref(&set))?;
    }
    Ok(())
}

fn pivot_predict(
    s: &Settings,
    source: &str,
    pivot: &Stage,
    (k_pivot, k_final): (usize, usize),
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ab = load(s)?;
    let bc = load_stage(&pivot.manifest, pivot.graph.as_deref())?;
    let m_ab = load_predictor(&s.paths.model)?;
    let m_bc = load_predictor(&pivot.model)?;
    let r_ab = Retriever::new(&m_ab, &ab.graph, &ab.data.text_embeddings, s.exec)?;
    let r_bc = Retriever::new(&m_bc, &bc.graph, &bc.data.text_embeddings, s.exec)?;
    let set = pivot_retrieve(&r_ab, &r_bc, source, k_pivot, k_final)?;
    print_candidates(&set, &idiom_index(&bc.data));
    if let Some(p) = out {
        write_jsonl_atomic(p, std::slice::from_ref(&set))?;
    }
    Ok(())
}

/// Offline provider: answers selection prompts with the first candidate and
/// anything else with a fixed rendering of the prompt's last line.
fn offline_provider() -> MockProvider {
    MockProvider::from_fn("offline", |prompt: &str| -> Result<String, ProviderError> {
        if prompt.contains("\n1. ") {
            return Ok("1".into());
        }
        let last = prompt.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or_default();
        Ok(format!("[mock translation] {}", last.trim()))
    })
}

fn translate(
    s: &Settings,
    input: &Path,
    out: &Path,
    provider: &str,
    templates: Option<&Path>,
    k: usize,
) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let model = load_predictor(&s.paths.model)?;
    let retriever = Retriever::new(&model, &graph, &data.text_embeddings, s.exec)?;
    let idioms = idiom_index(&data);
    let head = s.paths.head.as_deref().map(ProjectionHead::load).transpose()?;
    let index = head
        .as_ref()
        .map(|h| HeadIndex::build(h, &graph, &data.text_embeddings))
        .transpose()?;
    let provider: Box<dyn LlmProvider> = match provider {
        "http" => Box::new(idiomce::pipeline::HttpProvider::from_env()?),
        _ => Box::new(offline_provider()),
    };
    let translator = Translator {
        provider: provider.as_ref(),
        templates: match templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        },
        decoding: DecodingParams::default(),
        k,
        idioms: &idioms,
        retriever: Some(&retriever),
        unseen: head.as_ref().zip(index.as_ref()).map(|(head, index)| UnseenContext {
            head,
            index,
            embeddings: &data.text_embeddings,
            attach: s.attach,
            seed: s.seed,
        }),
    };
    let items = read_batch(input)?;
    let jobs = s.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    let results = translate_batch(&translator, &items, jobs)?;
    write_jsonl_atomic(out, &results)?;
    let fallbacks = results.iter().filter(|r| r.selection_fallback).count();
    println!(
        "{} sentences translated with {} ({} selection fallbacks) -> {}",
        results.len(),
        provider.id(),
        fallbacks,
        out.display()
    );
    Ok(())
}

fn eval(s: &Settings, split_seed: Option<u64>, ks: Option<&[usize]>, csv: Option<&Path>) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let (model, sidecar) = load_model(&s.paths.model)?;
    let split_seed = split_seed
        .or(sidecar.as_ref().and_then(|sc| sc.split_seed))
        .unwrap_or(s.seed);
    let fractions = sidecar
        .as_ref()
        .and_then(|sc| sc.config.as_ref())
        .map_or(s.train.fractions, |c| c.fractions);
    log::info!("evaluating on split seed {split_seed}");
    let split = split_edges(&graph, fractions, split_seed)?;
    let train_graph = split.train_graph(&graph)?;
    let ks = ks.unwrap_or(&s.train.hits_k);
    let mut hits = std::collections::BTreeMap::new();
    for &k in ks {
        hits.insert(k, hits_at_k(&model, &train_graph, &data.text_embeddings, &split.test, k)?);
    }
    let auc = link_auc(&model, &train_graph, &data.text_embeddings, &split.test, &split.test_negatives)?;
    let hash = sidecar.map(|sc| sc.config_hash).unwrap_or_default();
    let report = MetricReport::from_runs("IdiomCE", &[TestMetrics { hits, auc }], hash);
    print!("{}", markdown_table(std::slice::from_ref(&report), ks));
    if let Some(p) = csv {
        fs::write(p, csv_table(&[report], ks)).map_err(|e| CliError::domain(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn ablate(s: &Settings, k: usize, out: Option<&Path>) -> Result<(), CliError> {
    let Loaded { data, graph } = load(s)?;
    let report = run_ablation(&graph, &data.text_embeddings, &s.train, k)?;
    print!(
        "{}",
        markdown_table(&[report.with_nodedup.clone(), report.without_nodedup.clone()], &s.train.hits_k)
    );
    println!(
        "cold fraction {:.3}; Hits@{k} deltas {:?}; wins {} losses {} ties {}; one-sided sign test p = {:.4}",
        report.cold_fraction, report.deltas, report.wins, report.losses, report.ties, report.sign_test_p
    );
    if let Some(p) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(p, json).map_err(|e| CliError::domain(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
