//! Evaluation metrics and response retrieval.

mod metrics;
mod retrieval;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;

pub use metrics::{bleu4, corpus_idf_metric, perplexity, MetricReport};
pub use retrieval::{
    build_instances, combine, rank_candidates, read_instances, recall_at_k, score_instances,
    tune_retrieval_weight, write_instances, ComponentScores, RetrievalInstance, RetrievalMode,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Invalid(String),
}
