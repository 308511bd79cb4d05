//! Training objective components, computed from supplied embeddings and token
//! log-probabilities. Nothing here updates model weights.
//!
//! The per-cluster objective is
//! `total = (1 - d) * (l_clus + gold_score) + d * l_gen`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DAMPING: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("tokens and logprobs differ in length ({tokens} vs {logprobs})")]
    LengthMismatch { tokens: usize, logprobs: usize },
    #[error("invalid log-probability {value} at position {index}")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("damping factor {0} outside [0, 1]")]
    Damping(f64),
    #[error("loss component `{name}` must be finite and non-negative, got {value}")]
    Component { name: &'static str, value: f64 },
}

/// Per-token log-probabilities of a reference sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, LossError> {
        let t = Self { tokens, logprobs };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(LossError::LengthMismatch {
                tokens: self.tokens.len(),
                logprobs: self.logprobs.len(),
            });
        }
        if let Some((index, &value)) = self
            .logprobs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v > 0.0)
        {
            return Err(LossError::InvalidLogprob { index, value });
        }
        Ok(())
    }
}

/// Mean negative log-likelihood per token.
pub fn gen_loss(reference: &TokenLogProbs) -> Result<f64, LossError> {
    reference.validate()?;
    if reference.logprobs.is_empty() {
        return Err(LossError::EmptySequence);
    }
    let t = reference.logprobs.len() as f64;
    Ok(-reference.logprobs.iter().sum::<f64>() / t)
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

/// `softmax(xs / tau)` with the largest logit shifted to zero.
fn softmax(xs: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = xs.iter().map(|x| x / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Perplexity-distillation signal for the retriever.
///
/// The target distribution is `softmax(lm_loglikes / tau_lm)`: comments under
/// which the generator finds the reference key point more likely get more
/// mass. The result is the cross-entropy of the retriever distribution
/// `softmax(retriever_scores / tau_ret)` against that target.
pub fn gold_score(
    retriever_scores: &[f64],
    lm_loglikes: &[f64],
    tau_lm: f64,
    tau_ret: f64,
) -> Result<f64, LossError> {
    if retriever_scores.len() != lm_loglikes.len() {
        return Err(LossError::LengthMismatch {
            tokens: retriever_scores.len(),
            logprobs: lm_loglikes.len(),
        });
    }
    if retriever_scores.is_empty() {
        return Err(LossError::EmptySequence);
    }
    for &t in &[tau_lm, tau_ret] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(LossError::Temperature(t));
        }
    }
    if let Some(&x) = retriever_scores
        .iter()
        .chain(lm_loglikes)
        .find(|x| !x.is_finite())
    {
        return Err(LossError::NonFinite(x));
    }
    let target = softmax(lm_loglikes, tau_lm);
    // -Σ p log q with log q_i = s_i - m - ln Σ exp(s_j - m), regrouped so
    // that equal scores contribute exactly zero beyond the log-partition.
    let scaled: Vec<f64> = retriever_scores.iter().map(|x| x / tau_ret).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = scaled.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    let h = log_z
        + target
            .iter()
            .zip(&scaled)
            .map(|(p, s)| p * (m - s))
            .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_clus: f64,
    pub gold_score: f64,
    pub l_gen: f64,
    pub d: f64,
    pub total: f64,
}

pub fn combined_loss(
    l_clus: f64,
    gold: f64,
    l_gen: f64,
    d: f64,
) -> Result<LossBreakdown, LossError> {
    if !(0.0..=1.0).contains(&d) {
        return Err(LossError::Damping(d));
    }
    for (name, value) in [("l_clus", l_clus), ("gold_score", gold), ("l_gen", l_gen)] {
        if !value.is_finite() || value < 0.0 {
            return Err(LossError::Component { name, value });
        }
    }
    Ok(LossBreakdown {
        l_clus,
        gold_score: gold,
        l_gen,
        d,
        total: (1.0 - d) * (l_clus + gold) + d * l_gen,
    })
}
