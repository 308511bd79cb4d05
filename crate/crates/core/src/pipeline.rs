//! Per-query orchestration (retrieve, cluster, summarize) and replay of the
//! per-cluster training losses from supplied log-probabilities.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    clus_loss, cluster_comments, gold_centroids, match_gold, ClusterError, ClusterSet,
};
use crate::corpus::{Comment, Corpus, Query};
use crate::lossbook::{
    combined_loss, gen_loss, gold_score, perplexity, LossBreakdown, LossError, TokenLogProbs,
};
use crate::retrieval::{embed_query, retrieve_embedded, RetrievalResult};
use crate::summarizer::{
    generate_summary, GenerationOptions, Generator, KpSummary, SummarizeError,
};
use crate::vectorspace::{BackendError, EmbeddingVector, Encoder, SimilarityMetric, VectorError};

pub const NO_RELEVANT_OPINIONS: &str = "No relevant opinions found for this question.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl PipelineError {
    /// Failures caused by an encoder or generator rather than by the inputs.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Self::Backend(_) | Self::Summarize(SummarizeError::Partial { .. })
        )
    }
}

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub threshold: f64,
    pub lambda: f64,
    pub metric: SimilarityMetric,
    pub generation: GenerationOptions,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            threshold: crate::retrieval::DEFAULT_RETRIEVAL_THRESHOLD,
            lambda: crate::clustering::DEFAULT_LAMBDA,
            metric: SimilarityMetric::Dot,
            generation: GenerationOptions::default(),
        }
    }
}

/// Retrieval result plus the embedding of every candidate comment.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub result: RetrievalResult,
    pub embeddings: HashMap<String, EmbeddingVector>,
}

/// Scores every comment of the query's product against the query.
pub fn retrieve_stage(
    query: &Query,
    corpus: &Corpus,
    encoder: &dyn Encoder,
    config: &StageConfig,
) -> Result<Retrieved, PipelineError> {
    let comments: Vec<&Comment> = corpus.comments_for_product(&query.product_id).collect();
    let embedded = embed_query(query, &comments, encoder)?;
    let result = retrieve_embedded(
        &query.id,
        &embedded,
        config.threshold,
        SimilarityMetric::Dot,
    )?;
    Ok(Retrieved {
        result,
        embeddings: embedded.comments.into_iter().collect(),
    })
}

pub fn cluster_stage(
    retrieved: &Retrieved,
    config: &StageConfig,
) -> Result<ClusterSet, PipelineError> {
    Ok(cluster_comments(
        &retrieved.result,
        &retrieved.embeddings,
        config.lambda,
        config.metric,
    )?)
}

/// An empty cluster set yields a summary with no key points.
pub fn summarize_stage(
    query: &Query,
    clusters: &ClusterSet,
    corpus: &Corpus,
    generator: &dyn Generator,
    config: &StageConfig,
) -> Result<KpSummary, PipelineError> {
    if clusters.is_empty() {
        return Ok(KpSummary {
            query_id: query.id.clone(),
            preamble: NO_RELEVANT_OPINIONS.to_string(),
            records: Vec::new(),
            raw_generation: String::new(),
        });
    }
    Ok(generate_summary(
        generator,
        query,
        clusters,
        &corpus.comments,
        &config.generation,
    )?)
}

#[derive(Debug, Clone)]
pub struct QueryRun {
    pub retrieved: Retrieved,
    pub clusters: ClusterSet,
    pub summary: KpSummary,
}

pub fn run_query(
    query_id: &str,
    corpus: &Corpus,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
    config: &StageConfig,
) -> Result<QueryRun, PipelineError> {
    let query = corpus
        .queries
        .get(query_id)
        .ok_or_else(|| PipelineError::UnknownQuery(query_id.to_string()))?;
    let retrieved = retrieve_stage(query, corpus, encoder, config)?;
    let clusters = cluster_stage(&retrieved, config)?;
    let summary = summarize_stage(query, &clusters, corpus, generator, config)?;
    Ok(QueryRun {
        retrieved,
        clusters,
        summary,
    })
}

/// Generator log-probabilities for one cluster's reference key point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub query_id: String,
    pub cluster_id: usize,
    /// Reference key point tokens and their log-probabilities.
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default)]
    pub logprobs: Vec<f64>,
    /// Log-likelihood of the reference key point conditioned on each comment.
    #[serde(default)]
    pub comment_loglikes: BTreeMap<String, f64>,
}

pub fn load_replay(reader: impl BufRead) -> Result<Vec<ReplayRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub gold_threshold: f64,
    pub d: f64,
    pub tau_lm: f64,
    pub tau_ret: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gold_threshold: crate::clustering::DEFAULT_LAMBDA,
            d: crate::lossbook::DEFAULT_DAMPING,
            tau_lm: 1.0,
            tau_ret: 1.0,
        }
    }
}

/// Loss accounting for one predicted cluster. Components whose inputs are
/// missing stay `None`; the total needs all three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLosses {
    pub query_id: String,
    pub cluster_id: usize,
    pub matched_gold: Vec<usize>,
    pub l_clus: Option<f64>,
    pub gold_score: Option<f64>,
    pub l_gen: Option<f64>,
    pub perplexity: Option<f64>,
    pub combined: Option<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Recomputes the per-cluster loss components for one query.
pub fn replay_losses(
    query: &Query,
    retrieved: &Retrieved,
    clusters: &ClusterSet,
    replay: &[ReplayRecord],
    config: &LossConfig,
) -> Result<Vec<ClusterLosses>, PipelineError> {
    let gold = query.gold_clusters.as_deref().unwrap_or_default();
    let centroids = gold_centroids(gold, &retrieved.embeddings)?;
    let scores: HashMap<&str, f64> = retrieved
        .result
        .ranked
        .iter()
        .map(|r| (r.comment_id.as_str(), r.score))
        .collect();

    let mut out = Vec::new();
    for cluster in &clusters.clusters {
        let mut row = ClusterLosses {
            query_id: query.id.clone(),
            cluster_id: cluster.id,
            matched_gold: Vec::new(),
            l_clus: None,
            gold_score: None,
            l_gen: None,
            perplexity: None,
            combined: None,
            notes: Vec::new(),
        };
        match match_gold(cluster, &centroids, config.gold_threshold)? {
            Some(m) => {
                row.l_clus = Some(clus_loss(cluster, &m.target, &retrieved.embeddings)?);
                row.matched_gold = m.indices;
            }
            None => row.notes.push("no gold cluster matched".into()),
        }

        let rec = replay
            .iter()
            .find(|r| r.query_id == query.id && r.cluster_id == cluster.id);
        match rec {
            None => row.notes.push("no replay record".into()),
            Some(rec) => {
                if !rec.logprobs.is_empty() {
                    let lp = TokenLogProbs::new(rec.tokens.clone(), rec.logprobs.clone())?;
                    let l = gen_loss(&lp)?;
                    row.l_gen = Some(l);
                    row.perplexity = Some(perplexity(l));
                }
                let missing: Vec<&str> = cluster
                    .member_ids
                    .iter()
                    .filter(|id| !rec.comment_loglikes.contains_key(*id))
                    .map(String::as_str)
                    .collect();
                if rec.comment_loglikes.is_empty() {
                    row.notes.push("no comment log-likelihoods".into());
                } else if !missing.is_empty() {
                    row.notes
                        .push(format!("log-likelihood missing for {}", missing.join(", ")));
                } else {
                    let s: Vec<f64> = cluster
                        .member_ids
                        .iter()
                        .map(|id| scores[id.as_str()])
                        .collect();
                    let l: Vec<f64> = cluster
                        .member_ids
                        .iter()
                        .map(|id| rec.comment_loglikes[id])
                        .collect();
                    row.gold_score = Some(gold_score(&s, &l, config.tau_lm, config.tau_ret)?);
                }
            }
        }
        if let (Some(c), Some(g), Some(l)) = (row.l_clus, row.gold_score, row.l_gen) {
            row.combined = Some(combined_loss(c, g, l, config.d)?);
        }
        out.push(row);
    }
    Ok(out)
}
