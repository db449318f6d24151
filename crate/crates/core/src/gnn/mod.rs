//! Inductive link predictor: SAGE encoder, MLP decoder, BCE training.

mod model;
mod sampling;
mod train;

pub use model::{
    bce_loss, link_objective, mean_aggregate, sage_forward, Activation, Adjacency, LinkPredictor,
    ModelDims, ModelMeta, NodeEmbeddings, NodeMatrix, PairScorer, SageLayerParams, MLP1_B, MLP1_W,
    MLP2_B, MLP2_W, PROB_CLAMP, SAGE1_B, SAGE1_W, SAGE2_B, SAGE2_W,
};
pub use sampling::{sample_negatives, split_edges, EdgeSplit, SplitFractions};
pub use train::{
    load_model, save_model, sidecar_path, train_link_predictor, train_on_split, ModelSidecar, RunReport,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::graph::GraphError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("asked for {requested} negatives but only {available} non-edges exist")]
    ExhaustedNonEdges { requested: usize, available: usize },
    #[error("too few edges to split: {0}")]
    TooFewEdges(usize),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("training diverged: loss is not finite")]
    NonFiniteLoss,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}
