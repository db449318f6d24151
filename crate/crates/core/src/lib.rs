//! Cultural idiom knowledge graphs, inductive link prediction and
//! one-to-many idiom retrieval for idiomatic translation.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`ingest`]: idiom corpora (JSONL) and `IDCE` embedding files
//! - [`graph`]: the bipartite source/target graph and its JSON format
//! - [`kg`]: graph construction from cultural-feature similarity
//! - [`nodedup`]: cold-start augmentation by neighbor duplication
//! - [`nn`]: parameters, Adam, gradient checking, `IDCM` checkpoints
//! - [`gnn`]: SAGE encoder, MLP link decoder and training
//! - [`contrastive`]: triplet mining, projection head, unseen-idiom attachment
//! - [`pipeline`]: retrieval (seen, unseen, pivot) and LLM selection/translation
//! - [`eval`]: Hits@k, AUC and the augmentation ablation

pub mod exec;
pub mod graph;
pub mod ingest;
pub mod kg;
pub mod nn;
pub mod nodedup;
pub mod gnn;
pub mod eval;
pub mod contrastive;
pub mod pipeline;

pub use exec::Execution;
