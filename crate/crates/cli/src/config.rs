//! Run configuration: a config file (TOML or JSON) overlaid by command-line
//! flags, resolved into the library's per-stage configs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use idiomce::contrastive::{AttachConfig, HeadConfig};
use idiomce::gnn::{SplitFractions, TrainConfig};
use idiomce::ingest::DatasetManifest;
use idiomce::kg::{KgConfig, ThresholdScope};
use idiomce::nodedup::AugmentConfig;
use idiomce::pipeline::{DEFAULT_K_FINAL, DEFAULT_K_PIVOT};
use idiomce::Execution;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Settings shared by every subcommand. Each one may also be given in the
/// `--config` file under the same name (with underscores); flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Dataset manifest (JSON or TOML) [default: manifest.json]
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Graph file [default: the manifest's graph_file, else graph.json]
    #[arg(long, global = true, value_name = "PATH")]
    pub graph: Option<PathBuf>,
    /// Link-predictor checkpoint [default: model.idcm]
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Projection-head checkpoint; enables the unseen-idiom path
    #[arg(long, global = true, value_name = "PATH")]
    pub head: Option<PathBuf>,

    /// Seed for splits, initialization, sampling and attachment [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Edge threshold: per-source, global or fixed:<cosine> [default: per-source]
    #[arg(long, global = true, value_name = "MODE")]
    pub threshold: Option<String>,
    /// Targets with fewer neighbors than this are cold (delta) [default: 3]
    #[arg(long, global = true)]
    pub delta: Option<usize>,
    /// Duplicates per neighbor of a cold target [default: 2]
    #[arg(long, global = true)]
    pub copies: Option<usize>,
    /// Apply node duplication while training [default: true]
    #[arg(long, global = true, value_name = "BOOL")]
    pub augment: Option<bool>,
    /// Training epochs per run [default: 50]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Independent training runs [default: 5]
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Hidden width of both GNN layers [default: 64]
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Adam learning rate for the link predictor [default: 0.001]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Edge split as train,valid,test [default: 0.8,0.1,0.1]
    #[arg(long, global = true, value_name = "T,V,T")]
    pub fractions: Option<String>,
    /// Triplet margin (alpha) [default: 1]
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// Projection-head output width [default: 256]
    #[arg(long, global = true)]
    pub head_dim: Option<usize>,
    /// Projection-head training epochs [default: 20]
    #[arg(long, global = true)]
    pub head_epochs: Option<usize>,
    /// Similarity floor for unseen-idiom neighbors (tau) [default: 0.75]
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Similar seen sources consulted for an unseen idiom (M) [default: 5]
    #[arg(long, global = true)]
    pub top_m: Option<usize>,
    /// Targets attached to an unseen idiom [default: 5]
    #[arg(long, global = true)]
    pub max_targets: Option<usize>,

    /// Candidate count for retrieval (config file only; `--k` on commands)
    #[arg(skip)]
    pub k: Option<usize>,
    /// Hits@k cutoffs reported by training and evaluation (config file only)
    #[arg(skip)]
    pub hits_k: Option<Vec<usize>>,
}

macro_rules! prefer {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        Overrides { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Overrides {
    /// `self` (from flags) layered over `file`.
    pub fn over(self, file: Overrides) -> Overrides {
        let flags = self;
        prefer!(flags, file; manifest, graph, model, head, seed, threshold, delta, copies, augment, epochs,
            runs, hidden, lr, fractions, margin, head_dim, head_epochs, tau, top_m, max_targets, k, hits_k)
    }

    pub fn from_file(path: &Path) -> Result<Overrides, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let mut parsed: Overrides = parse_by_extension(path, &text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        // paths in a config file are relative to the file itself
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut parsed.manifest, &mut parsed.graph, &mut parsed.model, &mut parsed.head]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(parsed)
    }
}

fn parse_by_extension<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, String> {
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

/// Read a manifest and resolve its paths against its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::domain(format!("manifest {}: {e}", path.display())))?;
    let m: DatasetManifest =
        parse_by_extension(path, &text).map_err(|e| CliError::domain(format!("manifest {}: {e}", path.display())))?;
    Ok(m.resolve(path.parent().unwrap_or(Path::new("."))))
}

#[derive(Debug, Clone, Serialize)]
pub struct Paths {
    pub manifest: PathBuf,
    pub graph: Option<PathBuf>,
    pub model: PathBuf,
    pub head: Option<PathBuf>,
}

impl Paths {
    pub fn graph_for(&self, manifest: &DatasetManifest) -> PathBuf {
        self.graph
            .clone()
            .or_else(|| manifest.graph_file.clone())
            .unwrap_or_else(|| PathBuf::from("graph.json"))
    }
}

/// Fully resolved settings for one invocation; logged before any work.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub kg: KgConfig,
    pub train: TrainConfig,
    pub head: HeadConfig,
    pub attach: AttachConfig,
    pub k: usize,
    pub k_pivot: usize,
    #[serde(skip)]
    pub exec: Execution,
}

pub fn parse_threshold(mode: &str) -> Result<KgConfig, CliError> {
    match mode {
        "per-source" => Ok(KgConfig::default()),
        "global" => Ok(KgConfig {
            scope: ThresholdScope::Global,
            ..KgConfig::default()
        }),
        other => match other.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(c)) if (-1.0..=1.0).contains(&c) => Ok(KgConfig::fixed(c)),
            _ => Err(CliError::usage(format!(
                "invalid threshold `{mode}`: expected per-source, global or fixed:<cosine in [-1, 1]>"
            ))),
        },
    }
}

pub fn parse_fractions(s: &str) -> Result<SplitFractions, CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("invalid fractions `{s}`: expected three numbers like 0.8,0.1,0.1")))?;
    match parts[..] {
        [a, b, c] => SplitFractions::new(a, b, c).map_err(|e| CliError::usage(format!("invalid fractions `{s}`: {e}"))),
        _ => Err(CliError::usage(format!("invalid fractions `{s}`: expected three numbers"))),
    }
}

/// Hits@k cutoffs given as one comma-separated argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cutoffs(pub Vec<usize>);

/// Parse a comma-separated list of positive cutoffs such as `5,10,20,50`.
pub fn parse_ks(s: &str) -> Result<Cutoffs, String> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a positive integer")))
        .collect::<Result<_, _>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err("cutoffs must be positive".into());
    }
    Ok(Cutoffs(ks))
}

impl Settings {
    pub fn resolve(o: Overrides, jobs: Option<usize>) -> Result<Settings, CliError> {
        let seed = o.seed.unwrap_or(0);
        let exec = if jobs == Some(1) {
            Execution::Sequential
        } else {
            Execution::default()
        };
        let mut kg = parse_threshold(o.threshold.as_deref().unwrap_or("per-source"))?;
        kg.exec = exec;

        let base = TrainConfig::default();
        let aug_default = AugmentConfig::default();
        let augment = AugmentConfig {
            delta: o.delta.unwrap_or(aug_default.delta),
            copies: o.copies.unwrap_or(aug_default.copies),
        };
        if augment.copies == 0 {
            return Err(CliError::usage("--copies must be at least 1"));
        }
        let fractions = match &o.fractions {
            Some(s) => parse_fractions(s)?,
            None => base.fractions,
        };
        let train = TrainConfig {
            epochs: o.epochs.unwrap_or(base.epochs),
            runs: o.runs.unwrap_or(base.runs),
            hidden: o.hidden.unwrap_or(base.hidden),
            lr: o.lr.unwrap_or(base.lr),
            seed,
            fractions,
            augment: o.augment.unwrap_or(true).then_some(augment),
            hits_k: o.hits_k.clone().unwrap_or(base.hits_k.clone()),
            exec,
            ..base
        };

        let hd = HeadConfig::default();
        let head = HeadConfig {
            out_dim: o.head_dim.unwrap_or(hd.out_dim),
            margin: o.margin.unwrap_or(hd.margin),
            epochs: o.head_epochs.unwrap_or(hd.epochs),
            seed,
            ..hd
        };
        let ad = AttachConfig::default();
        let attach = AttachConfig {
            top_m: o.top_m.unwrap_or(ad.top_m),
            tau: o.tau.unwrap_or(ad.tau),
            max_targets: o.max_targets.unwrap_or(ad.max_targets),
        };
        Ok(Settings {
            seed,
            jobs,
            paths: Paths {
                manifest: o.manifest.unwrap_or_else(|| PathBuf::from("manifest.json")),
                graph: o.graph,
                model: o.model.unwrap_or_else(|| PathBuf::from("model.idcm")),
                head: o.head,
            },
            kg,
            train,
            head,
            attach,
            k: o.k.unwrap_or(DEFAULT_K_FINAL),
            k_pivot: DEFAULT_K_PIVOT,
            exec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = Overrides {
            epochs: Some(10),
            seed: Some(4),
            ..Overrides::default()
        };
        let flags = Overrides {
            epochs: Some(3),
            ..Overrides::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.epochs, Some(3));
        assert_eq!(merged.seed, Some(4));
    }

    #[test]
    fn threshold_modes() {
        assert_eq!(parse_threshold("global").unwrap().scope, ThresholdScope::Global);
        assert_eq!(parse_threshold("fixed:0.5").unwrap().fixed_cutoff, Some(0.5));
        assert!(parse_threshold("fixed:2").is_err());
        assert!(parse_threshold("median").is_err());
    }

    #[test]
    fn defaults_follow_the_library() {
        let s = Settings::resolve(Overrides::default(), None).unwrap();
        assert_eq!(s.train, TrainConfig { exec: s.exec, ..TrainConfig::default() });
        assert_eq!(s.attach, AttachConfig::default());
        assert_eq!(s.head, HeadConfig::default());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "epochs = 3\nwarp_speed = 9\n").unwrap();
        assert!(matches!(Overrides::from_file(&p), Err(CliError::Usage(_))));
    }

    #[test]
    fn ks_parse() {
        assert_eq!(parse_ks("5,10, 20,50").unwrap(), Cutoffs(vec![5, 10, 20, 50]));
        assert!(parse_ks("5,0").is_err());
        assert!(parse_ks("five").is_err());
    }
}
