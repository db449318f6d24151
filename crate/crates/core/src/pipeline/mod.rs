//! Inference: candidate retrieval for seen, unseen and pivot-composed idioms,
//! then LLM selection and translation.

mod llm;
mod prompt;
mod retrieval;
mod translate;

pub use llm::{DecodingParams, LlmProvider, MockProvider, ProviderError};
#[cfg(feature = "http")]
pub use llm::{HttpConfig, HttpProvider};
pub use prompt::{PromptTemplate, TemplateError, TemplateKind, TemplateSet};
pub use retrieval::{
    pivot_retrieve, retrieve_topk, retrieve_unseen, Candidate, CandidateSet, Retriever, UnseenRetrieval,
    DEFAULT_K_FINAL, DEFAULT_K_PIVOT, DEFAULT_TOP_K,
};
pub use translate::{
    format_candidates, parse_selection, read_batch, select_target_idiom, translate_batch, translate_direct,
    translate_sentence, write_jsonl_atomic, BatchItem, Selection, TranslationPath, TranslationResult, Translator,
    UnseenContext,
};

use thiserror::Error;

use crate::contrastive::ContrastiveError;
use crate::gnn::GnnError;
use crate::graph::GraphError;
use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown source node `{0}`")]
    UnknownNode(String),
    #[error("unknown idiom `{0}`")]
    UnknownIdiom(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("pivot vocabulary mismatch: {0}")]
    PivotVocabularyMismatch(String),
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("batch line {line}: {reason}")]
    BadBatchLine { line: usize, reason: String },
    #[error("batch item {line}: {source}")]
    BatchItem {
        line: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}
