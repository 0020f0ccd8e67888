//! Corpus encoding, exact top-k search and ranking metrics.

mod corpus;
mod eval;
mod index;
mod metrics;

pub use corpus::{format_qrels, parse_qrels, parse_queries, Corpus, EvalSet, Qrels, Run};
pub use eval::{evaluate, EvalReport, RunEntry, DEFAULT_CUTOFFS};
pub use index::{build_index, encode_normalized, EmbeddingIndex, Hit};
pub use metrics::{mrr_at_k, recall_at_k};
