//! Knowledge-graph construction from cultural-feature similarity.
//!
//! Each source idiom is compared with every target idiom by cosine
//! similarity. Unusually high similarities are treated as outliers and become
//! edges. The outlier cutoff is calibrated from the shape of the similarity
//! distribution: a near-normal sample (small skewness and excess kurtosis)
//! uses a z-score cutoff, anything else uses the Tukey IQR fence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::graph::{BipartiteGraph, GraphError};
use crate::ingest::{EmbeddingMatrix, IdiomRecord};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("similarity distribution has zero variance")]
    DegenerateDistribution,
    #[error("no cultural-feature embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("one side of the graph is empty")]
    EmptySide,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, KgError> {
    if u.len() != v.len() {
        return Err(KgError::DimMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(KgError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Population moments and quartiles of one similarity sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `m3 / m2^1.5`
    pub skewness: f64,
    /// `m4 / m2^2 - 3`
    pub excess_kurtosis: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Quantile by linear interpolation between order statistics at
/// position `q * (n - 1)` (the "inclusive" method). `sorted` must be ascending.
pub fn quantile_inclusive(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn compute_moments(samples: &[f64]) -> Result<SimilarityStats, KgError> {
    let n = samples.len();
    if n < 4 {
        return Err(KgError::TooFewSamples(n));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let std = m2.sqrt();
    if std == 0.0 || std <= 1e-12 * mean.abs() {
        return Err(KgError::DegenerateDistribution);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_inclusive(&sorted, 0.25);
    let q3 = quantile_inclusive(&sorted, 0.75);
    Ok(SimilarityStats {
        n,
        mean,
        std,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        q1,
        q3,
        iqr: q3 - q1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThresholdRule {
    ZScore { z: f64, cutoff: f64 },
    Iqr { k: f64, cutoff: f64 },
    Fixed { cutoff: f64 },
}

impl ThresholdRule {
    pub fn cutoff(&self) -> f64 {
        match *self {
            ThresholdRule::ZScore { cutoff, .. }
            | ThresholdRule::Iqr { cutoff, .. }
            | ThresholdRule::Fixed { cutoff } => cutoff,
        }
    }

    pub fn accepts(&self, similarity: f64) -> bool {
        similarity >= self.cutoff()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    /// Calibrate on each source idiom's row of similarities.
    PerSource,
    /// Calibrate once on all source-target similarities.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgConfig {
    pub scope: ThresholdScope,
    /// Overrides calibration with a fixed similarity cutoff.
    pub fixed_cutoff: Option<f64>,
    pub z: f64,
    pub iqr_k: f64,
    /// Normality gate on |skewness|.
    pub max_abs_skewness: f64,
    /// Normality gate on |excess kurtosis|.
    pub max_abs_excess_kurtosis: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig {
            scope: ThresholdScope::PerSource,
            fixed_cutoff: None,
            z: 2.5,
            iqr_k: 1.5,
            max_abs_skewness: 0.5,
            max_abs_excess_kurtosis: 1.0,
            exec: Execution::default(),
        }
    }
}

impl KgConfig {
    pub fn fixed(cutoff: f64) -> Self {
        KgConfig {
            fixed_cutoff: Some(cutoff),
            ..Default::default()
        }
    }
}

pub fn calibrate_threshold(stats: &SimilarityStats, config: &KgConfig) -> Result<ThresholdRule, KgError> {
    if let Some(cutoff) = config.fixed_cutoff {
        return Ok(ThresholdRule::Fixed { cutoff });
    }
    if !(stats.std > 0.0) {
        return Err(KgError::DegenerateDistribution);
    }
    let near_normal = stats.skewness.abs() <= config.max_abs_skewness
        && stats.excess_kurtosis.abs() <= config.max_abs_excess_kurtosis;
    Ok(if near_normal {
        ThresholdRule::ZScore {
            z: config.z,
            cutoff: stats.mean + config.z * stats.std,
        }
    } else {
        ThresholdRule::Iqr {
            k: config.iqr_k,
            cutoff: stats.q3 + config.iqr_k * stats.iqr,
        }
    })
}

/// Rule for one sample; `None` when the sample has no spread and hence no outliers.
fn rule_for(samples: &[f64], config: &KgConfig) -> Result<Option<ThresholdRule>, KgError> {
    if let Some(cutoff) = config.fixed_cutoff {
        return Ok(Some(ThresholdRule::Fixed { cutoff }));
    }
    match compute_moments(samples) {
        Ok(stats) => calibrate_threshold(&stats, config).map(Some),
        Err(KgError::DegenerateDistribution) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Row `s` holds the similarity of source `s` to every target.
pub fn similarity_matrix(
    sources: &[&[f32]],
    targets: &[&[f32]],
    exec: Execution,
) -> Result<Vec<Vec<f64>>, KgError> {
    exec.map(sources.len(), |s| {
        targets
            .iter()
            .map(|t| cosine_similarity(sources[s], t))
            .collect::<Result<Vec<_>, _>>()
    })
    .into_iter()
    .collect()
}

/// Thresholded edges from a precomputed similarity matrix, plus the rule
/// used for each source row (one shared rule in global scope).
pub fn select_edges(
    sims: &[Vec<f64>],
    config: &KgConfig,
) -> Result<(Vec<(usize, usize)>, Vec<Option<ThresholdRule>>), KgError> {
    let rules: Vec<Option<ThresholdRule>> = match config.scope {
        ThresholdScope::PerSource => config
            .exec
            .map_slice(sims, |row| rule_for(row, config))
            .into_iter()
            .collect::<Result<_, _>>()?,
        ThresholdScope::Global => {
            let all: Vec<f64> = sims.iter().flatten().copied().collect();
            vec![rule_for(&all, config)?; sims.len()]
        }
    };
    let mut edges = Vec::new();
    for (s, (row, rule)) in sims.iter().zip(&rules).enumerate() {
        if let Some(rule) = rule {
            edges.extend(row.iter().enumerate().filter(|(_, &x)| rule.accepts(x)).map(|(t, _)| (s, t)));
        }
    }
    Ok((edges, rules))
}

pub fn build_graph(
    source: &[IdiomRecord],
    target: &[IdiomRecord],
    cultural_features: &EmbeddingMatrix,
    config: &KgConfig,
) -> Result<BipartiteGraph, KgError> {
    if source.is_empty() || target.is_empty() {
        return Err(KgError::EmptySide);
    }
    let lookup = |recs: &[IdiomRecord]| -> Result<Vec<&[f32]>, KgError> {
        recs.iter()
            .map(|r| {
                cultural_features
                    .get(&r.id)
                    .ok_or_else(|| KgError::MissingEmbedding(r.id.clone()))
            })
            .collect()
    };
    let (src_vecs, tgt_vecs) = (lookup(source)?, lookup(target)?);
    let sims = similarity_matrix(&src_vecs, &tgt_vecs, config.exec)?;
    let (edges, _) = select_edges(&sims, config)?;
    let g = BipartiteGraph::from_parts(
        source[0].lang.clone(),
        target[0].lang.clone(),
        source.iter().map(|r| r.id.clone()),
        target.iter().map(|r| r.id.clone()),
        edges,
    )?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(KgError::ZeroVector)));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(KgError::DimMismatch(1, 2))));
    }

    #[test]
    fn moments_of_one_to_five() {
        let s = compute_moments(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!(s.skewness.abs() < 1e-15);
        assert!((s.excess_kurtosis + 1.3).abs() < 1e-12);
        assert_eq!((s.q1, s.q3, s.iqr), (2.0, 4.0, 2.0));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn moments_error_cases() {
        assert!(matches!(compute_moments(&[1.0, 2.0, 3.0]), Err(KgError::TooFewSamples(3))));
        assert!(matches!(
            compute_moments(&[0.4; 6]),
            Err(KgError::DegenerateDistribution)
        ));
    }

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let s = compute_moments(&[-3.0, -1.0, 0.0, 1.0, 3.0, -0.5, 0.5]).unwrap();
        assert_eq!(s.skewness, 0.0);
    }

    #[test]
    fn rule_selection() {
        let cfg = KgConfig::default();
        // skewed: g1 = 1.5
        let skewed = compute_moments(&[1.0, 1.0, 1.0, 1.0, 10.0]).unwrap();
        assert!((skewed.skewness - 1.5).abs() < 1e-12);
        assert!(matches!(calibrate_threshold(&skewed, &cfg).unwrap(), ThresholdRule::Iqr { .. }));

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normalish: Vec<f64> = (0..2000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let st = compute_moments(&normalish).unwrap();
        let rule = calibrate_threshold(&st, &cfg).unwrap();
        match rule {
            ThresholdRule::ZScore { cutoff, .. } => assert!((cutoff - (st.mean + 2.5 * st.std)).abs() < 1e-12),
            other => panic!("expected z-score rule, got {other:?} for {st:?}"),
        }

        let fixed = KgConfig::fixed(0.5);
        assert_eq!(calibrate_threshold(&skewed, &fixed).unwrap(), ThresholdRule::Fixed { cutoff: 0.5 });
    }

    #[test]
    fn two_by_two_fixed_split() {
        let sims = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let (edges, _) = select_edges(&sims, &KgConfig::fixed(0.5)).unwrap();
        assert_eq!(edges, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn sources_below_cutoff_stay_isolated() {
        let src = [IdiomRecord::new("en:a", "en", "a"), IdiomRecord::new("en:b", "en", "b")];
        let tgt = [IdiomRecord::new("hi:x", "hi", "x"), IdiomRecord::new("hi:y", "hi", "y")];
        let feats = EmbeddingMatrix::from_rows(
            2,
            [
                ("en:a", vec![1.0, 0.0]),
                ("en:b", vec![-1.0, -1.0]),
                ("hi:x", vec![1.0, 0.1]),
                ("hi:y", vec![0.9, 0.2]),
            ],
        )
        .unwrap();
        let g = build_graph(&src, &tgt, &feats, &KgConfig::fixed(0.5)).unwrap();
        assert_eq!(g.num_sources(), 2);
        assert_eq!(g.source_degrees(), vec![2, 0]);
    }

    #[test]
    fn missing_embedding_and_empty_side() {
        let src = [IdiomRecord::new("en:a", "en", "a")];
        let tgt = [IdiomRecord::new("hi:x", "hi", "x")];
        let feats = EmbeddingMatrix::from_rows(2, [("en:a", vec![1.0, 0.0])]).unwrap();
        assert!(matches!(
            build_graph(&src, &tgt, &feats, &KgConfig::fixed(0.5)),
            Err(KgError::MissingEmbedding(id)) if id == "hi:x"
        ));
        assert!(matches!(
            build_graph(&src, &[], &feats, &KgConfig::fixed(0.5)),
            Err(KgError::EmptySide)
        ));
    }
}
