//! ROUGE-1/2/L F-measures with max-pairing over key point sets.
//!
//! Tokens are lowercased alphanumeric runs; no stemming, no stopword removal.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::vectorspace::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

impl fmt::Display for RougeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::R1 => "ROUGE-1",
            Self::R2 => "ROUGE-2",
            Self::RL => "ROUGE-L",
        })
    }
}

fn f_measure(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 || cand == 0 || reference == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_default() += 1;
        }
    }
    out
}

/// Clipped n-gram overlap F-measure.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let c: Vec<String> = tokenize(candidate).collect();
    let r: Vec<String> = tokenize(reference).collect();
    if c == r {
        // Covers texts too short to contain an n-gram.
        return if c.is_empty() && candidate != reference {
            0.0
        } else {
            1.0
        };
    }
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    let overlap: usize = cc
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    f_measure(
        overlap,
        c.len().saturating_sub(n - 1),
        r.len().saturating_sub(n - 1),
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F-measure.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c: Vec<String> = tokenize(candidate).collect();
    let r: Vec<String> = tokenize(reference).collect();
    if c == r {
        return if c.is_empty() && candidate != reference {
            0.0
        } else {
            1.0
        };
    }
    f_measure(lcs_len(&c, &r), c.len(), r.len())
}

pub fn rouge(variant: RougeVariant, candidate: &str, reference: &str) -> f64 {
    match variant {
        RougeVariant::R1 => rouge_n(candidate, reference, 1),
        RougeVariant::R2 => rouge_n(candidate, reference, 2),
        RougeVariant::RL => rouge_l(candidate, reference),
    }
}

/// Best ROUGE against any reference, averaged over generated key points.
pub fn rouge_max_avg(
    generated: &[String],
    reference: &[String],
    variant: RougeVariant,
) -> Result<f64, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::EmptySet("generated set"));
    }
    if reference.is_empty() {
        return Err(EvalError::EmptySet("reference set"));
    }
    let total: f64 = generated
        .iter()
        .map(|g| {
            reference
                .iter()
                .map(|r| rouge(variant, g, r))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / generated.len() as f64)
}
