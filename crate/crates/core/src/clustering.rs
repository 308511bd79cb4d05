//! Greedy opinion clustering of retrieved comments.
//!
//! Comments are visited in retrieval rank order. A comment joins every
//! existing cluster whose mean similarity to that cluster's members is at
//! least `lambda`; if it joins none it seeds a new cluster. A comment may thus
//! belong to several clusters.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldCluster;
use crate::retrieval::RetrievalResult;
use crate::vectorspace::{centroid, dot, EmbeddingVector, SimilarityMetric, VectorError};

pub const DEFAULT_LAMBDA: f64 = 1.2;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no embedding for comment `{0}`")]
    MissingEmbedding(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub member_ids: Vec<String>,
    pub centroid: EmbeddingVector,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub source: String,
    pub clusters: Vec<Cluster>,
    pub lambda_used: f64,
    pub metric: SimilarityMetric,
}

impl ClusterSet {
    pub fn get(&self, id: usize) -> Option<&Cluster> {
        self.clusters.get(id).filter(|c| c.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Clusters largest first, ties by id.
    pub fn by_size(&self) -> Vec<&Cluster> {
        let mut v: Vec<&Cluster> = self.clusters.iter().collect();
        v.sort_by(|a, b| b.len().cmp(&a.len()).then(a.id.cmp(&b.id)));
        v
    }
}

/// Seam for alternative grouping strategies.
pub trait ClusteringStrategy {
    fn cluster(
        &self,
        ranked: &RetrievalResult,
        embeddings: &HashMap<String, EmbeddingVector>,
    ) -> Result<ClusterSet, ClusterError>;
}

#[derive(Debug, Clone, Copy)]
pub struct GreedyThreshold {
    pub lambda: f64,
    pub metric: SimilarityMetric,
}

impl Default for GreedyThreshold {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            metric: SimilarityMetric::Dot,
        }
    }
}

impl ClusteringStrategy for GreedyThreshold {
    fn cluster(
        &self,
        ranked: &RetrievalResult,
        embeddings: &HashMap<String, EmbeddingVector>,
    ) -> Result<ClusterSet, ClusterError> {
        cluster_comments(ranked, embeddings, self.lambda, self.metric)
    }
}

pub fn cluster_comments(
    ranked: &RetrievalResult,
    embeddings: &HashMap<String, EmbeddingVector>,
    lambda: f64,
    metric: SimilarityMetric,
) -> Result<ClusterSet, ClusterError> {
    let lookup = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| ClusterError::MissingEmbedding(id.to_string()))
    };
    // Member embeddings per cluster, kept alongside ids to avoid repeated lookups.
    let mut groups: Vec<(Vec<String>, Vec<&EmbeddingVector>)> = Vec::new();
    for rc in &ranked.ranked {
        let v = lookup(&rc.comment_id)?;
        let mut joined = Vec::new();
        for (gi, (_, members)) in groups.iter().enumerate() {
            let mut total = 0.0;
            for m in members {
                total += metric.score(v, m)?;
            }
            if total / members.len() as f64 >= lambda {
                joined.push(gi);
            }
        }
        if joined.is_empty() {
            groups.push((vec![rc.comment_id.clone()], vec![v]));
        } else {
            for gi in joined {
                groups[gi].0.push(rc.comment_id.clone());
                groups[gi].1.push(v);
            }
        }
    }
    let clusters = groups
        .into_iter()
        .enumerate()
        .map(|(id, (member_ids, members))| {
            Ok(Cluster {
                id,
                member_ids,
                centroid: centroid(members)?,
            })
        })
        .collect::<Result<Vec<_>, VectorError>>()?;
    Ok(ClusterSet {
        source: ranked.query_id.clone(),
        clusters,
        lambda_used: lambda,
        metric,
    })
}

/// Mean embedding of each gold cluster's members.
pub fn gold_centroids(
    gold: &[GoldCluster],
    embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<Vec<EmbeddingVector>, ClusterError> {
    gold.iter()
        .map(|g| {
            let vs = g
                .member_ids
                .iter()
                .map(|id| {
                    embeddings
                        .get(id)
                        .ok_or_else(|| ClusterError::MissingEmbedding(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(centroid(vs)?)
        })
        .collect()
}

/// Gold clusters aligned with one predicted cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldMatch {
    /// Indices into the gold list, ascending.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub target: EmbeddingVector,
}

/// Every gold cluster whose centroid has dot product at least `sim_threshold`
/// with the predicted centroid. `None` when nothing qualifies.
pub fn match_gold(
    cluster: &Cluster,
    gold_centroids: &[EmbeddingVector],
    sim_threshold: f64,
) -> Result<Option<GoldMatch>, ClusterError> {
    let mut indices = Vec::new();
    let mut scores = Vec::new();
    for (i, g) in gold_centroids.iter().enumerate() {
        let s = dot(&cluster.centroid, g)?;
        if s >= sim_threshold {
            indices.push(i);
            scores.push(s);
        }
    }
    if indices.is_empty() {
        return Ok(None);
    }
    let target = centroid(indices.iter().map(|&i| &gold_centroids[i]))?;
    Ok(Some(GoldMatch {
        indices,
        scores,
        target,
    }))
}

/// Mean squared distance from each member embedding to the matched gold centre.
pub fn clus_loss(
    cluster: &Cluster,
    target: &EmbeddingVector,
    embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<f64, ClusterError> {
    let mut total = 0.0;
    for id in &cluster.member_ids {
        let v = embeddings
            .get(id)
            .ok_or_else(|| ClusterError::MissingEmbedding(id.clone()))?;
        total += target.sq_dist(v)?;
    }
    Ok(total / cluster.member_ids.len() as f64)
}
