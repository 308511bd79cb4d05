//! Summary evaluation: set-level similarity metrics, ROUGE, quantification
//! error, key point to comment matching, pairwise ranking and annotator
//! agreement.

pub mod agreement;
pub mod bradley_terry;
pub mod matching;
pub mod report;
pub mod rouge;

use std::collections::HashMap;

use thiserror::Error;

use crate::vectorspace::{tokenize, BackendError};

pub use agreement::{annotator_kappa, cohen_kappa, AnnotatorKappa};
pub use bradley_terry::{bradley_terry, BtRanking, PairwiseComparison};
pub use matching::{match_prf, vote_aggregate, MatchJudgment, MatchLabel, Prf};
pub use report::{evaluate, EvalReport, QueryInput, QueryMetrics, ReportConfig};
pub use rouge::{rouge_max_avg, RougeVariant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: {0} is empty")]
    EmptySet(&'static str),
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("comparison of `{0}` against itself")]
    SelfComparison(String),
    #[error("comparison graph is disconnected: {0:?} cannot be ranked against the rest")]
    Disconnected(Vec<String>),
    #[error("scorer returned {actual} scores for {expected} pairs")]
    ScoreCount { expected: usize, actual: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Similarity `f` between two key points, in `[0, 1]`.
pub trait SimilarityScorer: Send + Sync {
    fn name(&self) -> String;

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, BackendError>;
}

/// 1 for identical strings, 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl SimilarityScorer for ExactMatch {
    fn name(&self) -> String {
        "exact".into()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, BackendError> {
        Ok(pairs
            .iter()
            .map(|(a, b)| if a == b { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Unigram F1 over lowercased alphanumeric tokens, counting multiplicity.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapF1;

pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta: Vec<String> = tokenize(a).collect();
    let tb: Vec<String> = tokenize(b).collect();
    if ta.is_empty() || tb.is_empty() {
        return if ta.is_empty() && tb.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &ta {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &tb {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / tb.len() as f64;
    let r = overlap as f64 / ta.len() as f64;
    2.0 * p * r / (p + r)
}

impl SimilarityScorer for TokenOverlapF1 {
    fn name(&self) -> String {
        "token-f1".into()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, BackendError> {
        Ok(pairs.iter().map(|(a, b)| token_f1(a, b)).collect())
    }
}

/// `rows × cols` similarity matrix with `m[i][j] = f(rows[i], cols[j])`.
pub fn score_matrix(
    rows: &[String],
    cols: &[String],
    f: &dyn SimilarityScorer,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let pairs: Vec<(&str, &str)> = rows
        .iter()
        .flat_map(|a| cols.iter().map(move |b| (a.as_str(), b.as_str())))
        .collect();
    let flat = f.score_pairs(&pairs)?;
    if flat.len() != pairs.len() {
        return Err(EvalError::ScoreCount {
            expected: pairs.len(),
            actual: flat.len(),
        });
    }
    Ok(flat
        .chunks(cols.len().max(1))
        .map(<[f64]>::to_vec)
        .collect())
}

/// Mean over rows of the row maximum.
pub fn row_max_mean(m: &[Vec<f64>]) -> Result<f64, EvalError> {
    if m.is_empty() || m[0].is_empty() {
        return Err(EvalError::EmptySet("score matrix"));
    }
    let total: f64 = m
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / m.len() as f64)
}

/// Mean over columns of the column maximum.
pub fn col_max_mean(m: &[Vec<f64>]) -> Result<f64, EvalError> {
    if m.is_empty() || m[0].is_empty() {
        return Err(EvalError::EmptySet("score matrix"));
    }
    let cols = m[0].len();
    let total: f64 = (0..cols)
        .map(|j| m.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / cols as f64)
}

fn non_empty(xs: &[String], what: &'static str) -> Result<(), EvalError> {
    if xs.is_empty() {
        Err(EvalError::EmptySet(what))
    } else {
        Ok(())
    }
}

/// For each generated key point, its best reference match, averaged.
pub fn soft_precision(
    generated: &[String],
    reference: &[String],
    f: &dyn SimilarityScorer,
) -> Result<f64, EvalError> {
    non_empty(generated, "generated set")?;
    non_empty(reference, "reference set")?;
    row_max_mean(&score_matrix(generated, reference, f)?)
}

/// For each reference key point, its best generated match, averaged.
pub fn soft_recall(
    generated: &[String],
    reference: &[String],
    f: &dyn SimilarityScorer,
) -> Result<f64, EvalError> {
    non_empty(generated, "generated set")?;
    non_empty(reference, "reference set")?;
    col_max_mean(&score_matrix(generated, reference, f)?)
}

pub fn soft_f1(sp: f64, sr: f64) -> f64 {
    if sp + sr == 0.0 {
        0.0
    } else {
        2.0 * sp * sr / (sp + sr)
    }
}

/// Mean similarity of each generated key point to its closest other key
/// point. A single key point has redundancy 0.
pub fn redundancy(generated: &[String], f: &dyn SimilarityScorer) -> Result<f64, EvalError> {
    non_empty(generated, "generated set")?;
    let n = generated.len();
    if n == 1 {
        return Ok(0.0);
    }
    let m = score_matrix(generated, generated, f)?;
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| m[i][j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean absolute error between predicted and actual prevalence counts.
pub fn quant_err(pairs: &[(usize, usize)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptySet("prevalence pairs"));
    }
    let total: usize = pairs.iter().map(|&(p, a)| p.abs_diff(a)).sum();
    Ok(total as f64 / pairs.len() as f64)
}
