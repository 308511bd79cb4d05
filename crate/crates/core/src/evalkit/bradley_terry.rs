//! Bradley–Terry strengths from pairwise comparisons.
//!
//! Fitted with the minorization-maximization update
//! `π_i ← W_i / Σ_j n_ij / (π_i + π_j)`, applied to all systems at once.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub winner: String,
    pub loser: String,
    #[serde(default)]
    pub dimension: String,
}

/// Reads one comparison per line. Ties and self-comparisons are rejected.
pub fn load_comparisons(reader: impl BufRead) -> Result<Vec<PairwiseComparison>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        let tie = v.get("tie").and_then(|t| t.as_bool()).unwrap_or(false)
            || v.get("outcome").and_then(|o| o.as_str()) == Some("tie");
        if tie {
            return Err(format!("line {}: ties are not supported", i + 1));
        }
        let c: PairwiseComparison =
            serde_json::from_value(v).map_err(|e| format!("line {}: {e}", i + 1))?;
        if c.winner == c.loser {
            return Err(format!(
                "line {}: `{}` compared against itself",
                i + 1,
                c.winner
            ));
        }
        out.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtRanking {
    /// System ids in lexicographic order.
    pub systems: Vec<String>,
    /// Strengths aligned with `systems`, summing to 100.
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some group of systems never lost to the rest, so the maximum
    /// likelihood estimate does not exist and the iteration diverges.
    pub degenerate: bool,
    /// Systems whose true estimate is unbounded relative to the others.
    pub infinite: Vec<String>,
}

impl BtRanking {
    pub fn strength(&self, system: &str) -> Option<f64> {
        self.systems
            .iter()
            .position(|s| s == system)
            .map(|i| self.strengths[i])
    }

    /// Model probability that `a` beats `b`.
    pub fn win_probability(&self, a: &str, b: &str) -> Option<f64> {
        let (pa, pb) = (self.strength(a)?, self.strength(b)?);
        if pa + pb == 0.0 {
            return Some(0.5);
        }
        Some(pa / (pa + pb))
    }

    /// `(system, strength)` strongest first; equal strengths by id.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self
            .systems
            .iter()
            .map(String::as_str)
            .zip(self.strengths.iter().copied())
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

pub fn bradley_terry(comparisons: &[PairwiseComparison]) -> Result<BtRanking, EvalError> {
    if comparisons.is_empty() {
        return Err(EvalError::EmptySet("comparisons"));
    }
    let mut names = BTreeSet::new();
    for c in comparisons {
        if c.winner == c.loser {
            return Err(EvalError::SelfComparison(c.winner.clone()));
        }
        names.insert(c.winner.as_str());
        names.insert(c.loser.as_str());
    }
    let systems: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = systems.len();

    let mut wins = vec![0.0f64; n];
    let mut games = vec![vec![0.0f64; n]; n];
    let mut beats: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut beaten_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in comparisons {
        let (w, l) = (index[c.winner.as_str()], index[c.loser.as_str()]);
        wins[w] += 1.0;
        games[w][l] += 1.0;
        games[l][w] += 1.0;
        beats[w].push(l);
        beaten_by[l].push(w);
    }

    let undirected: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut v = beats[i].clone();
            v.extend(&beaten_by[i]);
            v
        })
        .collect();
    let linked = reachable(&undirected, 0);
    if linked.iter().any(|&r| !r) {
        let cut = (0..n)
            .filter(|&i| !linked[i])
            .map(|i| systems[i].clone())
            .collect();
        return Err(EvalError::Disconnected(cut));
    }

    // Every system must be able to reach every other along "beat" edges.
    let forward = reachable(&beats, 0);
    let backward = reachable(&beaten_by, 0);
    let degenerate = forward.iter().chain(&backward).any(|&r| !r);
    let mut infinite = Vec::new();
    if degenerate {
        // A system sits in a top group when everyone who transitively beats
        // it is also transitively beaten by it.
        for (i, name) in systems.iter().enumerate() {
            let down = reachable(&beats, i);
            let up = reachable(&beaten_by, i);
            if (0..n).all(|j| !up[j] || down[j]) {
                infinite.push(name.clone());
            }
        }
    }

    let mut pi = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                if wins[i] == 0.0 {
                    return 0.0;
                }
                let denom: f64 = (0..n)
                    .filter(|&j| games[i][j] > 0.0 && pi[i] + pi[j] > 0.0)
                    .map(|j| games[i][j] / (pi[i] + pi[j]))
                    .sum();
                wins[i] / denom
            })
            .collect();
        let total: f64 = next.iter().sum();
        for x in &mut next {
            *x /= total;
        }
        let change = pi
            .iter()
            .zip(&next)
            .map(|(&old, &new)| {
                if old > 0.0 {
                    (new - old).abs() / old
                } else if new > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        pi = next;
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }

    let strengths = pi.iter().map(|p| p * 100.0).collect();
    Ok(BtRanking {
        systems,
        strengths,
        iterations,
        converged,
        degenerate,
        infinite,
    })
}

/// Fits one ranking per comparison dimension.
pub fn bradley_terry_by_dimension(
    comparisons: &[PairwiseComparison],
) -> Result<BTreeMap<String, BtRanking>, EvalError> {
    let mut groups: BTreeMap<&str, Vec<PairwiseComparison>> = BTreeMap::new();
    for c in comparisons {
        groups
            .entry(c.dimension.as_str())
            .or_default()
            .push(c.clone());
    }
    groups
        .into_iter()
        .map(|(d, cs)| Ok((d.to_string(), bradley_terry(&cs)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(w: &str, l: &str) -> PairwiseComparison {
        PairwiseComparison {
            winner: w.into(),
            loser: l.into(),
            dimension: String::new(),
        }
    }

    #[test]
    fn three_to_one() {
        let cs = vec![cmp("A", "B"), cmp("A", "B"), cmp("A", "B"), cmp("B", "A")];
        let r = bradley_terry(&cs).unwrap();
        let ratio = r.strength("A").unwrap() / r.strength("B").unwrap();
        assert!((ratio - 3.0).abs() < 1e-6);
        assert!(r.converged && !r.degenerate);
        assert!((r.strengths.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn round_robin_is_flat() {
        let mut cs = Vec::new();
        for a in ["a", "b", "c"] {
            for b in ["a", "b", "c"] {
                if a != b {
                    cs.push(cmp(a, b));
                }
            }
        }
        let r = bradley_terry(&cs).unwrap();
        for s in &r.strengths {
            assert!((s - 100.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_self_and_disconnected() {
        assert!(matches!(
            bradley_terry(&[cmp("a", "a")]),
            Err(EvalError::SelfComparison(_))
        ));
        assert!(matches!(
            bradley_terry(&[cmp("a", "b"), cmp("c", "d")]),
            Err(EvalError::Disconnected(_))
        ));
    }

    #[test]
    fn all_wins_is_flagged() {
        let r =
            bradley_terry(&[cmp("a", "b"), cmp("a", "b"), cmp("b", "c"), cmp("c", "b")]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.infinite, vec!["a".to_string()]);
        assert_eq!(r.ranked()[0].0, "a");
    }

    #[test]
    fn loader_rejects_ties() {
        let ok = load_comparisons(
            "{\"winner\":\"a\",\"loser\":\"b\",\"dimension\":\"info\"}\n".as_bytes(),
        );
        assert_eq!(ok.unwrap().len(), 1);
        assert!(
            load_comparisons("{\"winner\":\"a\",\"loser\":\"b\",\"tie\":true}\n".as_bytes())
                .is_err()
        );
        assert!(load_comparisons("{\"winner\":\"a\",\"loser\":\"a\"}\n".as_bytes()).is_err());
    }
}
