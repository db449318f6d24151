mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_ks, Cutoffs, Overrides, Settings};

/// Cultural idiom knowledge graphs, link prediction and idiom-aware translation.
#[derive(Debug, Parser)]
#[command(name = "idiomce", version, propagate_version = true)]
struct Cli {
    /// Config file (TOML or JSON) with any of the global overrides
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages and translation requests [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the idiom graph from cultural embeddings
    BuildGraph {
        /// Output graph [default: the configured graph path]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Write the graph with cold targets augmented by node duplication
    Augment {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the link predictor and save the best run
    TrainGnn {
        /// Output checkpoint [default: the configured model path]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train the projection head used to place unseen idioms
    TrainContrastive {
        /// Output checkpoint [default: the configured head path, else head.idcm]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Attach an idiom that is not in the graph and write the extended graph
    Attach {
        /// Id of the idiom; looked up in the dataset or in --idioms/--embeddings
        #[arg(long)]
        idiom: String,
        /// Extra idiom records (JSONL) to search for the idiom
        #[arg(long, value_name = "PATH", requires = "embeddings")]
        idioms: Option<PathBuf>,
        /// Extra embeddings (IDCE) holding the idiom's vector
        #[arg(long, value_name = "PATH", requires = "idioms")]
        embeddings: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Rank target idioms for one source idiom
    Predict {
        #[arg(long)]
        source: String,
        /// Candidates returned [default: 5]
        #[arg(long)]
        k: Option<usize>,
        /// Also write the candidate set as JSONL
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Rank idioms of a third language through a pivot language
    PivotPredict {
        #[arg(long)]
        source: String,
        /// Manifest of the pivot-to-target dataset
        #[arg(long, value_name = "PATH")]
        pivot_manifest: PathBuf,
        /// Graph of the pivot-to-target dataset [default: its manifest's graph_file]
        #[arg(long, value_name = "PATH")]
        pivot_graph: Option<PathBuf>,
        /// Link predictor of the pivot-to-target dataset
        #[arg(long, value_name = "PATH")]
        pivot_model: PathBuf,
        /// Pivot idioms expanded [default: 3]
        #[arg(long)]
        k_pivot: Option<usize>,
        /// Final candidates [default: 5]
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Translate a JSONL batch of sentences
    Translate {
        /// Batch file, one {sentence, idiom_id?, idiom_text?, target_lang} per line
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// mock (offline, deterministic) or http (IDIOMCE_LLM_URL, IDIOMCE_LLM_MODEL, IDIOMCE_LLM_KEY)
        #[arg(long, default_value = "mock", value_parser = ["mock", "http"])]
        provider: String,
        /// Directory of prompt templates (<kind>.txt); missing kinds use built-ins
        #[arg(long, value_name = "DIR")]
        templates: Option<PathBuf>,
        /// Candidates offered for selection [default: 5]
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate a checkpoint on the test edges of a split
    Eval {
        /// Split seed [default: the seed recorded with the model, else --seed]
        #[arg(long)]
        split_seed: Option<u64>,
        /// Hits@k cutoffs [default: 5,10,20,50]
        #[arg(long, value_parser = parse_ks)]
        k: Option<Cutoffs>,
        /// Also write the table as CSV
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Train with and without node duplication and compare
    Ablate {
        /// Cutoff used for the paired comparison [default: 5]
        #[arg(long)]
        k: Option<usize>,
        /// Also write the report as JSON
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// A usage error exits with 2, anything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(Box<dyn std::error::Error + Send + Sync>),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CliError::Domain(msg.into().into())
    }
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(Box::new(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(e) => {
                write!(f, "error: {e}")?;
                let mut src = e.source();
                while let Some(s) = src {
                    write!(f, ": {s}")?;
                    src = s.source();
                }
                Ok(())
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    let settings = Settings::resolve(cli.overrides.over(file), cli.jobs)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::domain(format!("thread pool: {e}")))?;
    }
    log::info!("seed: {}", settings.seed);
    log::info!(
        "effective config: {}",
        serde_json::to_string(&settings).expect("settings serialize")
    );
    commands::dispatch(&cli.command, &settings)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version are successful exits; everything else is usage
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Domain(_) => 1,
            })
        }
    }
}
