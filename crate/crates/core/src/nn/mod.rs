//! Dense numeric substrate for the encoder and the projection head.
//!
//! Parameters are stored as `f32`; forward and backward passes accumulate in
//! `f64` and reductions always run in a fixed order.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use matrix::DenseMatrix;
pub(crate) use matrix::dot_f32_f64;
pub use params::{init_params, ParamKind, ParamSpec, ParamStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid shape for `{name}`: {rows}x{cols}")]
    InvalidShape { name: String, rows: usize, cols: usize },
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
