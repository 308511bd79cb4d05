//! Core algorithms for quantified, query-focused key point summarization of
//! product reviews.
//!
//! The pipeline is: [`retrieval`] selects query-relevant comments by embedding
//! similarity, [`clustering`] groups them into opinion clusters, and
//! [`summarizer`] drives a text generator one key point at a time over those
//! clusters. [`evalkit`] scores the result and [`lossbook`] recomputes the
//! training objective components from supplied embeddings and log-probabilities.

pub mod cache;
pub mod clustering;
pub mod corpus;
pub mod evalkit;
pub mod http;
pub mod lossbook;
pub mod pipeline;
pub mod retrieval;
pub mod summarizer;
pub mod vectorspace;

pub use clustering::{cluster_comments, Cluster, ClusterSet};
pub use corpus::{Comment, Corpus, GoldCluster, Query};
pub use evalkit::{EvalError, EvalReport, SimilarityScorer};
pub use pipeline::{run_query, PipelineError, StageConfig};
pub use retrieval::{retrieve, RankedComment, RetrievalResult};
pub use summarizer::{KpRecord, KpSummary};
pub use vectorspace::{EmbeddingVector, Encoder, MockEncoder, SimilarityMetric};
