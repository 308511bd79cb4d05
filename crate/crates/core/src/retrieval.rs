//! Threshold retrieval of query-relevant comments and precision@k.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Comment, Query};
use crate::vectorspace::{
    embed, embed_all, BackendError, EmbeddingVector, Encoder, SimilarityMetric, VectorError,
};

pub const DEFAULT_RETRIEVAL_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedComment {
    pub comment_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<RankedComment>,
    pub threshold_used: f64,
    /// Set when nothing cleared the threshold.
    pub empty: bool,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.comment_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Keeps comments scoring at least `threshold`, sorted by score descending and
/// then by comment id ascending.
pub fn rank_scores<I, S>(query_id: &str, scores: I, threshold: f64) -> RetrievalResult
where
    I: IntoIterator<Item = (S, f64)>,
    S: Into<String>,
{
    let mut ranked: Vec<RankedComment> = scores
        .into_iter()
        .filter(|(_, s)| *s >= threshold)
        .map(|(id, score)| RankedComment {
            comment_id: id.into(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.comment_id.cmp(&b.comment_id))
    });
    RetrievalResult {
        query_id: query_id.to_string(),
        empty: ranked.is_empty(),
        ranked,
        threshold_used: threshold,
    }
}

/// Embeddings of a query and its candidate comments.
#[derive(Debug, Clone)]
pub struct EmbeddedQuery {
    pub query: EmbeddingVector,
    pub comments: Vec<(String, EmbeddingVector)>,
}

pub fn embed_query(
    query: &Query,
    comments: &[&Comment],
    encoder: &dyn Encoder,
) -> Result<EmbeddedQuery, BackendError> {
    let qv = embed(encoder, &query.text)?;
    let texts: Vec<&str> = comments.iter().map(|c| c.text.as_str()).collect();
    let cvs = embed_all(encoder, &texts)?;
    Ok(EmbeddedQuery {
        query: qv,
        comments: comments.iter().map(|c| c.id.clone()).zip(cvs).collect(),
    })
}

pub fn retrieve_embedded(
    query_id: &str,
    embedded: &EmbeddedQuery,
    threshold: f64,
    metric: SimilarityMetric,
) -> Result<RetrievalResult, VectorError> {
    let scores = embedded
        .comments
        .iter()
        .map(|(id, v)| Ok((id.clone(), metric.score(&embedded.query, v)?)))
        .collect::<Result<Vec<_>, VectorError>>()?;
    Ok(rank_scores(query_id, scores, threshold))
}

/// Scores every comment against the query by dot product of their embeddings.
pub fn retrieve(
    query: &Query,
    comments: &[&Comment],
    encoder: &dyn Encoder,
    threshold: f64,
) -> Result<RetrievalResult, BackendError> {
    let embedded = embed_query(query, comments, encoder)?;
    Ok(retrieve_embedded(
        &query.id,
        &embedded,
        threshold,
        SimilarityMetric::Dot,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    K(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionAtK {
    pub value: f64,
    /// Fewer than k comments were ranked; the denominator is |ranked|.
    pub truncated: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("precision@k is undefined for an empty ranking")]
    EmptyRanking,
    #[error("k must be positive")]
    ZeroK,
}

pub fn precision_at_k(
    ranked: &RetrievalResult,
    relevant: &HashSet<String>,
    k: TopK,
) -> Result<PrecisionAtK, MetricError> {
    if ranked.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    let (n, truncated) = match k {
        TopK::K(0) => return Err(MetricError::ZeroK),
        TopK::K(k) if k > ranked.len() => (ranked.len(), true),
        TopK::K(k) => (k, false),
        TopK::All => (ranked.len(), false),
    };
    let hits = ranked
        .ranked
        .iter()
        .take(n)
        .filter(|r| relevant.contains(&r.comment_id))
        .count();
    Ok(PrecisionAtK {
        value: hits as f64 / n as f64,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

/// One line of a relevance judgments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub comment_id: String,
    pub label: Relevance,
}

pub fn load_relevance(path: impl AsRef<Path>) -> Result<Vec<RelevanceJudgment>, String> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| e.to_string())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
