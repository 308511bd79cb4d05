//! Synthetic, seeded inputs shared by the benchmarks.

use std::collections::HashMap;

use kpq_core::evalkit::PairwiseComparison;
use kpq_core::retrieval::rank_scores;
use kpq_core::{EmbeddingVector, MockEncoder, RetrievalResult};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 24] = [
    "battery",
    "life",
    "is",
    "long",
    "short",
    "sound",
    "bass",
    "crisp",
    "comfortable",
    "soft",
    "cheap",
    "price",
    "the",
    "lasts",
    "days",
    "dies",
    "fast",
    "loud",
    "quiet",
    "fit",
    "ear",
    "cushion",
    "case",
    "charge",
];

pub fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` mock-embedded comments ranked by random scores.
pub fn clustering_input(
    n: usize,
    seed: u64,
) -> (RetrievalResult, HashMap<String, EmbeddingVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = MockEncoder::new(seed, 64);
    let mut emb = HashMap::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("c{i}");
        let len = rng.random_range(3..10);
        emb.insert(id.clone(), encoder.embed_text(&sentence(&mut rng, len)));
        scores.push((id, rng.random_range(1.0..2.0)));
    }
    (rank_scores("bench", scores, f64::NEG_INFINITY), emb)
}

pub fn score_list(n: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (format!("c{i}"), rng.random_range(-1.0..3.0)))
        .collect()
}

/// Comparisons sampled from strengths `1, 2, ..., systems`.
pub fn comparisons(systems: usize, n: usize, seed: u64) -> Vec<PairwiseComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (i, j) = (rng.random_range(0..systems), rng.random_range(0..systems));
        if i == j {
            continue;
        }
        let p = (i + 1) as f64 / (i + j + 2) as f64;
        let (w, l) = if rng.random::<f64>() < p {
            (i, j)
        } else {
            (j, i)
        };
        out.push(PairwiseComparison {
            winner: format!("s{w}"),
            loser: format!("s{l}"),
            dimension: String::new(),
        });
    }
    out
}
