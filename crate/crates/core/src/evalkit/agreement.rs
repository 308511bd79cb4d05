//! Inter-annotator agreement.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const DEFAULT_MIN_SHARED: usize = 50;
pub const DEFAULT_MIN_PARTNERS: usize = 2;

/// Cohen's kappa for two aligned label sequences.
///
/// When chance agreement is already 1 (both annotators used one identical
/// label throughout) kappa is taken as 1.
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptySet("label sequence"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ca: HashMap<&L, usize> = HashMap::new();
    let mut cb: HashMap<&L, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let pe: f64 = ca
        .iter()
        .map(|(l, &k)| k as f64 * cb.get(l).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    let po = agree / n;
    if pe >= 1.0 {
        return Ok(1.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// One annotator's label for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation<L> {
    pub annotator: String,
    pub item: String,
    pub label: L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorKappa {
    /// Mean pairwise kappa over partners sharing enough items; `None` if
    /// there are no such partners.
    pub kappa: Option<f64>,
    /// Partners sharing at least the minimum number of items.
    pub partners: Vec<String>,
    pub judgments: usize,
    pub eligible: bool,
}

/// Per-annotator mean pairwise kappa. A partner counts when the two
/// annotators labelled at least `min_shared` common items. An annotator is
/// eligible when they have at least `min_partners` such partners.
pub fn annotator_kappa<L: Eq + Hash + Clone>(
    annotations: &[Annotation<L>],
    min_shared: usize,
    min_partners: usize,
) -> BTreeMap<String, AnnotatorKappa> {
    let mut by_annotator: BTreeMap<&str, HashMap<&str, &L>> = BTreeMap::new();
    for a in annotations {
        by_annotator
            .entry(a.annotator.as_str())
            .or_default()
            .insert(a.item.as_str(), &a.label);
    }
    let names: Vec<&str> = by_annotator.keys().copied().collect();
    let mut out = BTreeMap::new();
    for &me in &names {
        let mine = &by_annotator[me];
        let mut partners = Vec::new();
        let mut kappas = Vec::new();
        for &other in &names {
            if other == me {
                continue;
            }
            let theirs = &by_annotator[other];
            let mut shared: Vec<&str> = mine
                .keys()
                .filter(|k| theirs.contains_key(*k))
                .copied()
                .collect();
            if shared.len() < min_shared || shared.is_empty() {
                continue;
            }
            shared.sort_unstable();
            let a: Vec<&L> = shared.iter().map(|k| mine[k]).collect();
            let b: Vec<&L> = shared.iter().map(|k| theirs[k]).collect();
            kappas.push(cohen_kappa(&a, &b).expect("aligned and non-empty"));
            partners.push(other.to_string());
        }
        let kappa = if kappas.is_empty() {
            None
        } else {
            Some(kappas.iter().sum::<f64>() / kappas.len() as f64)
        };
        out.insert(
            me.to_string(),
            AnnotatorKappa {
                kappa,
                eligible: partners.len() >= min_partners,
                partners,
                judgments: mine.len(),
            },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 1], &[1, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&["x", "x"], &["x", "x"]).unwrap(), 1.0);
    }

    #[test]
    fn balanced_disagreement_is_minus_one() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), -1.0);
    }

    #[test]
    fn contingency_example() {
        // 10 items: both yes 4, a-yes b-no 2, a-no b-yes 1, both no 3
        let a = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let b = [1, 1, 1, 1, 0, 0, 1, 0, 0, 0];
        let po = 0.7;
        let pe = 0.6 * 0.5 + 0.4 * 0.5;
        let expected = (po - pe) / (1.0 - pe);
        assert!((cohen_kappa(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn single_annotator_is_ineligible() {
        let anns: Vec<Annotation<u8>> = (0..60)
            .map(|i| Annotation {
                annotator: "solo".into(),
                item: i.to_string(),
                label: (i % 2) as u8,
            })
            .collect();
        let r = annotator_kappa(&anns, DEFAULT_MIN_SHARED, DEFAULT_MIN_PARTNERS);
        assert!(!r["solo"].eligible);
        assert_eq!(r["solo"].kappa, None);
    }
}
