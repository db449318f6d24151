//! Link-prediction metrics: filtered Hits@k, AUC, run summaries and the
//! node-duplication ablation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::gnn::{self, GnnError, LinkPredictor, PairScorer, TrainConfig};
use crate::graph::BipartiteGraph;
use crate::ingest::EmbeddingMatrix;
use crate::nodedup::classify_nodes;

pub const TABLE_KS: [usize; 4] = [5, 10, 20, 50];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("graph has no cold targets under delta = {0}")]
    NoColdTargets(usize),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Exact over all pairs.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64, EvalError> {
    if positive.is_empty() {
        return Err(EvalError::EmptySet("positive"));
    }
    if negative.is_empty() {
        return Err(EvalError::EmptySet("negative"));
    }
    let mut credit = 0.0f64;
    for &p in positive {
        for &n in negative {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (positive.len() as f64 * negative.len() as f64))
}

/// AUC via the Mann-Whitney rank statistic with midranks for ties.
pub fn auc_rank_statistic(positive: &[f64], negative: &[f64]) -> Result<f64, EvalError> {
    if positive.is_empty() {
        return Err(EvalError::EmptySet("positive"));
    }
    if negative.is_empty() {
        return Err(EvalError::EmptySet("negative"));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&x| (x, true))
        .chain(negative.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// 1-based rank of `t` among the candidate targets for source `s`.
///
/// Candidates are all targets except `s`'s known positives (when
/// `filtered`); `t` itself always competes. Equal scores are ordered by
/// target id, matching the retrieval tie-break.
pub fn filtered_rank(
    scores: &[f64],
    target_ids: &[String],
    t: usize,
    known: &BTreeSet<usize>,
    filtered: bool,
) -> usize {
    let st = scores[t];
    1 + (0..scores.len())
        .filter(|&c| c != t && !(filtered && known.contains(&c)))
        .filter(|&c| scores[c] > st || (scores[c] == st && target_ids[c] < target_ids[t]))
        .count()
}

pub fn hits_from_ranks(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    Ok(100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Ranks for every test edge under a model's scores.
pub fn test_ranks(
    scorer: &PairScorer<'_>,
    target_ids: &[String],
    test_edges: &[(usize, usize)],
    known_positives: &BTreeSet<(usize, usize)>,
    filtered: bool,
    exec: Execution,
) -> Vec<usize> {
    exec.map_slice(test_edges, |&(s, t)| {
        let scores = scorer.scores_for_source(s);
        let known: BTreeSet<usize> = known_positives
            .range((s, 0)..(s + 1, 0))
            .map(|&(_, c)| c)
            .collect();
        filtered_rank(&scores, target_ids, t, &known, filtered)
    })
}

/// Hits@k (percent) of `test_edges` under `model`, with message passing over
/// `train_graph` and its edges filtered from the candidates.
pub fn hits_at_k(
    model: &LinkPredictor,
    train_graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    test_edges: &[(usize, usize)],
    k: usize,
) -> Result<f64, EvalError> {
    if test_edges.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let exec = Execution::default();
    let emb = model.encode(train_graph, features, exec)?;
    let scorer = model.scorer(&emb);
    let ranks = test_ranks(
        &scorer,
        train_graph.target_ids(),
        test_edges,
        train_graph.edge_set(),
        true,
        exec,
    );
    hits_from_ranks(&ranks, k)
}

/// AUC of test positives against negatives under `model`.
pub fn link_auc(
    model: &LinkPredictor,
    train_graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    test_edges: &[(usize, usize)],
    negative_edges: &[(usize, usize)],
) -> Result<f64, EvalError> {
    let emb = model.encode(train_graph, features, Execution::default())?;
    let scorer = model.scorer(&emb);
    let pos: Vec<f64> = test_edges.iter().map(|&(s, t)| scorer.score(s, t)).collect();
    let neg: Vec<f64> = negative_edges.iter().map(|&(s, t)| scorer.score(s, t)).collect();
    auc(&pos, &neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Test metrics of one training run. Hits in percent, AUC in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub hits: BTreeMap<usize, f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub runs: usize,
    pub hits: BTreeMap<usize, MeanStd>,
    pub auc: MeanStd,
    pub config_hash: String,
}

impl MetricReport {
    pub fn from_runs(label: impl Into<String>, runs: &[TestMetrics], config_hash: impl Into<String>) -> Self {
        let mut hits = BTreeMap::new();
        if let Some(first) = runs.first() {
            for &k in first.hits.keys() {
                let xs: Vec<f64> = runs.iter().map(|m| m.hits[&k]).collect();
                hits.insert(k, MeanStd::of(&xs));
            }
        }
        let aucs: Vec<f64> = runs.iter().map(|m| m.auc).collect();
        MetricReport {
            label: label.into(),
            runs: runs.len(),
            hits,
            auc: MeanStd::of(&aucs),
            config_hash: config_hash.into(),
        }
    }
}

fn header(ks: &[usize]) -> Vec<String> {
    let mut h = vec!["Variant".to_string()];
    h.extend(ks.iter().map(|k| format!("Hits@{k}")));
    h.push("AUC".into());
    h
}

fn cells(r: &MetricReport, ks: &[usize]) -> Vec<String> {
    let mut c = vec![r.label.clone()];
    for k in ks {
        c.push(r.hits.get(k).map_or("-".into(), MeanStd::display));
    }
    // AUC is shown on the same 0-100 scale as the hits columns
    c.push(
        MeanStd {
            mean: 100.0 * r.auc.mean,
            std: 100.0 * r.auc.std,
        }
        .display(),
    );
    c
}

/// Markdown table, one row per report, columns Hits@k... then AUC (x100).
pub fn markdown_table(reports: &[MetricReport], ks: &[usize]) -> String {
    let h = header(ks);
    let mut out = format!("| {} |\n|{}\n", h.join(" | "), "---|".repeat(h.len()));
    for r in reports {
        let _ = writeln!(out, "| {} |", cells(r, ks).join(" | "));
    }
    out
}

/// CSV with separate mean and std columns.
pub fn csv_table(reports: &[MetricReport], ks: &[usize]) -> String {
    let mut cols = vec!["variant".to_string()];
    for k in ks {
        cols.push(format!("hits@{k}_mean"));
        cols.push(format!("hits@{k}_std"));
    }
    cols.extend(["auc_mean".into(), "auc_std".into()]);
    let mut out = cols.join(",") + "\n";
    for r in reports {
        let mut row = vec![r.label.clone()];
        for k in ks {
            let m = r.hits.get(k).copied().unwrap_or(MeanStd { mean: f64::NAN, std: f64::NAN });
            row.push(format!("{:.4}", m.mean));
            row.push(format!("{:.4}", m.std));
        }
        row.push(format!("{:.4}", 100.0 * r.auc.mean));
        row.push(format!("{:.4}", 100.0 * r.auc.std));
        out += &(row.join(",") + "\n");
    }
    out
}

/// Paired comparison of training with and without node duplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub with_nodedup: MetricReport,
    pub without_nodedup: MetricReport,
    /// Per-run Hits@k difference (with − without) for the primary k.
    pub primary_k: usize,
    pub deltas: Vec<f64>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "with ≥ without".
    pub sign_test_p: f64,
    pub cold_fraction: f64,
}

/// P(X ≥ wins) for X ~ Binomial(wins + losses, 1/2); ties are dropped.
pub fn sign_test_one_sided(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=n {
        p += binomial(n, k) * 0.5f64.powi(n as i32);
    }
    p.min(1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Train with and without augmentation on identical splits and seeds.
pub fn run_ablation(
    graph: &BipartiteGraph,
    features: &EmbeddingMatrix,
    config: &TrainConfig,
    primary_k: usize,
) -> Result<AblationReport, EvalError> {
    let aug = config.augment.unwrap_or_default();
    let partition = classify_nodes(graph, aug.delta);
    if partition.cold.is_empty() {
        return Err(EvalError::NoColdTargets(aug.delta));
    }
    let with_cfg = TrainConfig {
        augment: Some(aug),
        ..config.clone()
    };
    let without_cfg = TrainConfig {
        augment: None,
        ..config.clone()
    };
    let with = gnn::train_link_predictor(graph, features, &with_cfg)?;
    let without = gnn::train_link_predictor(graph, features, &without_cfg)?;
    let metric = |o: &gnn::TrainOutcome| -> Result<Vec<f64>, EvalError> {
        o.runs
            .iter()
            .map(|r| {
                r.test
                    .as_ref()
                    .and_then(|m| m.hits.get(&primary_k).copied())
                    .ok_or(EvalError::EmptyTestSet)
            })
            .collect()
    };
    let (a, b) = (metric(&with)?, metric(&without)?);
    let deltas: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let wins = deltas.iter().filter(|&&d| d > 0.0).count();
    let losses = deltas.iter().filter(|&&d| d < 0.0).count();
    let mut with_report = with.summary.clone();
    with_report.label = "IdiomCE + NodeDup".into();
    let mut without_report = without.summary.clone();
    without_report.label = "IdiomCE w/o NodeDup".into();
    Ok(AblationReport {
        with_nodedup: with_report,
        without_nodedup: without_report,
        primary_k,
        ties: deltas.len() - wins - losses,
        wins,
        losses,
        sign_test_p: sign_test_one_sided(wins, losses),
        deltas,
        cold_fraction: partition.cold.len() as f64 / graph.num_targets().max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 3], &[0.5; 4]).unwrap(), 0.5);
        assert!(matches!(auc(&[], &[0.1]), Err(EvalError::EmptySet("positive"))));
        assert!(matches!(auc(&[0.1], &[]), Err(EvalError::EmptySet("negative"))));
    }

    #[test]
    fn rank_statistic_agrees_with_pairwise() {
        let pos = [0.3, 0.7, 0.7, 0.9, 0.1];
        let neg = [0.7, 0.2, 0.2, 0.05];
        let a = auc(&pos, &neg).unwrap();
        let b = auc_rank_statistic(&pos, &neg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn hand_ranked_toy_hits_at_one() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let none = BTreeSet::new();
        // true target wins in three of four cases
        let cases = [
            (vec![0.9, 0.1, 0.2], 0),
            (vec![0.1, 0.8, 0.2], 1),
            (vec![0.1, 0.2, 0.7], 2),
            (vec![0.9, 0.3, 0.2], 1),
        ];
        let ranks: Vec<usize> = cases
            .iter()
            .map(|(s, t)| filtered_rank(s, &ids, *t, &none, true))
            .collect();
        assert_eq!(ranks, vec![1, 1, 1, 2]);
        assert_eq!(hits_from_ranks(&ranks, 1).unwrap(), 75.0);
        assert_eq!(hits_from_ranks(&ranks, 3).unwrap(), 100.0);
        assert!(hits_from_ranks(&[], 3).is_err());
    }

    #[test]
    fn filtering_removes_known_positives() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let scores = [0.9, 0.8, 0.1];
        let known: BTreeSet<usize> = [0].into();
        assert_eq!(filtered_rank(&scores, &ids, 1, &known, true), 1);
        assert_eq!(filtered_rank(&scores, &ids, 1, &known, false), 2);
    }

    #[test]
    fn ties_break_by_target_id() {
        let ids: Vec<String> = ["b", "a"].iter().map(|s| s.to_string()).collect();
        let none = BTreeSet::new();
        assert_eq!(filtered_rank(&[0.5, 0.5], &ids, 0, &none, true), 2);
        assert_eq!(filtered_rank(&[0.5, 0.5], &ids, 1, &none, true), 1);
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_one_sided(5, 0), 1.0 / 32.0);
        assert_eq!(sign_test_one_sided(0, 0), 1.0);
        assert!((sign_test_one_sided(3, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tables_have_table5_columns() {
        let mut hits = BTreeMap::new();
        for k in TABLE_KS {
            hits.insert(k, 90.0);
        }
        let r = MetricReport::from_runs("en-hi", &[TestMetrics { hits, auc: 0.9633 }], "abc");
        let md = markdown_table(std::slice::from_ref(&r), &TABLE_KS);
        assert!(md.starts_with("| Variant | Hits@5 | Hits@10 | Hits@20 | Hits@50 | AUC |"));
        assert!(md.contains("96.33 ± 0.00"));
        let csv = csv_table(&[r], &TABLE_KS);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("variant,hits@5_mean"));
    }
}
