use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{link_objective, Adjacency, LinkPredictor, ModelDims, ModelMeta, NodeMatrix};
use super::sampling::{sample_negatives, split_edges, EdgeSplit, SplitFractions};
use super::GnnError;
use crate::eval::{auc, hits_from_ranks, test_ranks, MetricReport, TestMetrics, TABLE_KS};
use crate::exec::Execution;
use crate::graph::BipartiteGraph;
use crate::ingest::EmbeddingMatrix;
use crate::nn::{load_checkpoint, save_checkpoint, Adam, AdamConfig};
use crate::nodedup::{augment_graph, AugmentConfig, AugmentedGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub runs: usize,
    pub lr: f64,
    /// Negatives sampled per positive each epoch.
    pub negative_ratio: usize,
    pub seed: u64,
    pub hidden: usize,
    pub fractions: SplitFractions,
    /// Node duplication applied to the training graph after splitting.
    pub augment: Option<AugmentConfig>,
    pub hits_k: Vec<usize>,
    /// Exclude a source's training positives when ranking its test targets.
    pub filtered: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            runs: 5,
            lr: 1e-3,
            negative_ratio: 1,
            seed: 0,
            hidden: 64,
            fractions: SplitFractions::default(),
            augment: Some(AugmentConfig::default()),
            hits_k: TABLE_KS.to_vec(),
            filtered: true,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Short stable digest of every setting that affects the result.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialization is infallible");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    fn validate(&self) -> Result<(), GnnError> {
        self.fractions.validate()?;
        if self.epochs == 0 || self.runs == 0 || self.hidden == 0 || self.negative_ratio == 0 {
            return Err(GnnError::InvalidConfig(
                "epochs, runs, hidden and negative_ratio must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(GnnError::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_auc: Option<f64>,
    /// Training loss per epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    /// Loss after the last update, on the last epoch's pairs.
    pub final_loss: f64,
    pub test: Option<TestMetrics>,
    pub cold_targets: usize,
    pub added_edges: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model from the run with the best validation AUC (first run on ties).
    pub best: LinkPredictor,
    pub best_run: usize,
    pub models: Vec<LinkPredictor>,
    pub runs: Vec<RunReport>,
    pub splits: Vec<EdgeSplit>,
    pub summary: MetricReport,
}

/// One training run on a fixed split.
pub fn train_on_split(
    graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    split: &EdgeSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinkPredictor, RunReport), GnnError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(GnnError::EmptyTrainSplit);
    }
    let train_graph = split.train_graph(graph)?;
    let aug = match config.augment {
        Some(a) => augment_graph(&train_graph, a),
        None => AugmentedGraph::identity(train_graph, AugmentConfig::default().delta),
    };
    let g = &aug.graph;
    let x = NodeMatrix::from_graph(g, features)?;
    let adj = Adjacency::from_graph(g);
    let positives: Vec<(usize, usize)> = g.edges().collect();

    let dims = ModelDims::new(features.dim(), config.hidden);
    let mut model = LinkPredictor::init(dims, seed)?;
    model.meta = ModelMeta {
        seed,
        epochs: config.epochs,
        config_hash: config.config_hash(),
    };
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f0e_9a71);

    let mut best = (model.params.clone(), config.epochs, None::<f64>);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut last_negatives = Vec::new();
    for epoch in 1..=config.epochs {
        let negatives = sample_negatives(g, positives.len() * config.negative_ratio, &mut rng)?;
        let (loss, grads) = link_objective(&model.params, &adj, &x, &positives, &negatives, true)?;
        losses.push(loss);
        opt.step(&mut model.params, &grads.expect("gradient requested"))?;
        if !model.params.is_finite() {
            return Err(GnnError::NonFiniteLoss);
        }
        last_negatives = negatives;
        if !split.valid.is_empty() {
            let emb = model.encode_nodes(&adj, &x, Execution::Sequential)?;
            let scorer = model.scorer(&emb);
            let pos: Vec<f64> = split.valid.iter().map(|&(s, t)| scorer.score(s, t)).collect();
            let neg: Vec<f64> = split.valid_negatives.iter().map(|&(s, t)| scorer.score(s, t)).collect();
            let v = auc(&pos, &neg).map_err(|e| GnnError::InvalidConfig(e.to_string()))?;
            if best.2.is_none_or(|b| v > b) {
                best = (model.params.clone(), epoch, Some(v));
            }
        }
    }
    let (final_loss, _) = link_objective(&model.params, &adj, &x, &positives, &last_negatives, false)?;
    let (best_params, best_epoch, best_valid_auc) = if split.valid.is_empty() {
        (model.params.clone(), config.epochs, None)
    } else {
        best
    };
    model.params = best_params;

    let test = if split.test.is_empty() {
        None
    } else {
        let emb = model.encode_nodes(&adj, &x, Execution::Sequential)?;
        let scorer = model.scorer(&emb);
        let known: BTreeSet<(usize, usize)> = split.train.iter().copied().collect();
        let ranks = test_ranks(
            &scorer,
            g.target_ids(),
            &split.test,
            &known,
            config.filtered,
            Execution::Sequential,
        );
        let mut hits = std::collections::BTreeMap::new();
        for &k in &config.hits_k {
            hits.insert(k, hits_from_ranks(&ranks, k).expect("test set is non-empty"));
        }
        let pos: Vec<f64> = split.test.iter().map(|&(s, t)| scorer.score(s, t)).collect();
        let neg: Vec<f64> = split.test_negatives.iter().map(|&(s, t)| scorer.score(s, t)).collect();
        let a = auc(&pos, &neg).map_err(|e| GnnError::InvalidConfig(e.to_string()))?;
        Some(TestMetrics { hits, auc: a })
    };

    let report = RunReport {
        run: 0,
        seed,
        best_epoch,
        best_valid_auc,
        initial_loss: losses[0],
        final_loss,
        losses,
        test,
        cold_targets: aug.partition.cold.len(),
        added_edges: aug.added_edges.len(),
    };
    Ok((model, report))
}

/// `config.runs` independent runs; run `r` uses seed `config.seed + r` for
/// both its edge split and its initialization.
pub fn train_link_predictor(
    graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<TrainOutcome, GnnError> {
    config.validate()?;
    if graph.num_edges() == 0 {
        return Err(GnnError::EmptyTrainSplit);
    }
    graph.check_features(features)?;
    let results = config.exec.map(config.runs, |r| {
        let seed = config.run_seed(r);
        let split = split_edges(graph, config.fractions, seed)?;
        let (model, mut report) = train_on_split(graph, features, &split, config, seed)?;
        report.run = r;
        log::info!(
            "run {r}: seed {seed}, best epoch {}, loss {:.4} -> {:.4}",
            report.best_epoch,
            report.initial_loss,
            report.final_loss
        );
        Ok::<_, GnnError>((model, report, split))
    });
    let mut models = Vec::new();
    let mut runs = Vec::new();
    let mut splits = Vec::new();
    for res in results {
        let (m, r, s) = res?;
        models.push(m);
        runs.push(r);
        splits.push(s);
    }
    let mut best_run = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.best_valid_auc.unwrap_or(f64::NEG_INFINITY)
            > runs[best_run].best_valid_auc.unwrap_or(f64::NEG_INFINITY)
        {
            best_run = i;
        }
    }
    let metrics: Vec<TestMetrics> = runs.iter().filter_map(|r| r.test.clone()).collect();
    let label = format!("{}-{}", graph.source_lang, graph.target_lang);
    let summary = MetricReport::from_runs(label, &metrics, config.config_hash());
    Ok(TrainOutcome {
        best: models[best_run].clone(),
        best_run,
        models,
        runs,
        splits,
        summary,
    })
}

/// JSON sidecar written next to a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub seed: u64,
    pub epochs: usize,
    pub config_hash: String,
    /// Seed of the edge split the model was trained on, if any.
    pub split_seed: Option<u64>,
    pub config: Option<TrainConfig>,
    pub metrics: Option<MetricReport>,
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_model(model: &LinkPredictor, sidecar: &ModelSidecar, path: &Path) -> Result<(), GnnError> {
    save_checkpoint(&model.params, path)?;
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| GnnError::Sidecar(e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, json + "\n").map_err(|e| GnnError::Sidecar(format!("{}: {e}", side.display())))
}

/// Load a checkpoint and, when present, its sidecar.
pub fn load_model(path: &Path) -> Result<(LinkPredictor, Option<ModelSidecar>), GnnError> {
    let params = load_checkpoint(path)?;
    let side = sidecar_path(path);
    let sidecar: Option<ModelSidecar> = if side.exists() {
        let s = fs::read_to_string(&side).map_err(|e| GnnError::Sidecar(e.to_string()))?;
        Some(serde_json::from_str(&s).map_err(|e| GnnError::Sidecar(e.to_string()))?)
    } else {
        None
    };
    let meta = sidecar
        .as_ref()
        .map(|s| ModelMeta {
            seed: s.seed,
            epochs: s.epochs,
            config_hash: s.config_hash.clone(),
        })
        .unwrap_or_default();
    Ok((LinkPredictor::from_params(params, meta)?, sidecar))
}
