use std::collections::{BTreeSet, HashMap};

use kpq_core::clustering::clus_loss;
use kpq_core::lossbook::{combined_loss, gen_loss, gold_score, TokenLogProbs};
use kpq_core::retrieval::rank_scores;
use kpq_core::{cluster_comments, ClusterSet, EmbeddingVector, RetrievalResult, SimilarityMetric};
use proptest::prelude::*;

fn instance(vecs: &[Vec<f64>]) -> (RetrievalResult, HashMap<String, EmbeddingVector>) {
    let n = vecs.len();
    let ranked = rank_scores(
        "q",
        (0..n).map(|i| (format!("c{i}"), (n - i) as f64)),
        f64::NEG_INFINITY,
    );
    let emb = vecs
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("c{i}"), EmbeddingVector::new(v.clone()).unwrap()))
        .collect();
    (ranked, emb)
}

fn co_members(set: &ClusterSet) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for c in &set.clusters {
        for a in &c.member_ids {
            for b in &c.member_ids {
                if a < b {
                    out.insert((a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

fn vectors(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..=max)
}

proptest! {
    #[test]
    fn clusters_cover_the_retrieved_set(vs in vectors(8), lambda in -1.0..2.0f64) {
        let (r, e) = instance(&vs);
        let set = cluster_comments(&r, &e, lambda, SimilarityMetric::Dot).unwrap();
        let covered: BTreeSet<&str> = set.clusters.iter().flat_map(|c| c.member_ids.iter().map(String::as_str)).collect();
        let retrieved: BTreeSet<&str> = r.ids().collect();
        prop_assert_eq!(covered, retrieved);
        for c in &set.clusters {
            let distinct: BTreeSet<&String> = c.member_ids.iter().collect();
            prop_assert_eq!(distinct.len(), c.member_ids.len());
        }
    }

    #[test]
    fn clustering_is_deterministic(vs in vectors(8), lambda in -1.0..2.0f64) {
        let (r, e) = instance(&vs);
        let a = cluster_comments(&r, &e, lambda, SimilarityMetric::Dot).unwrap();
        let b = cluster_comments(&r, &e, lambda, SimilarityMetric::Dot).unwrap();
        prop_assert_eq!(a, b);
    }

    /// With two comments the only decision is whether the second joins the
    /// first, so a stricter threshold can only separate them.
    #[test]
    fn raising_lambda_never_merges_a_pair(vs in vectors(2), lo in -1.0..1.5f64, dl in 0.0..1.0f64) {
        let (r, e) = instance(&vs);
        let low = co_members(&cluster_comments(&r, &e, lo, SimilarityMetric::Dot).unwrap());
        let high = co_members(&cluster_comments(&r, &e, lo + dl, SimilarityMetric::Dot).unwrap());
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn clus_loss_is_nonnegative_and_zero_on_target(vs in vectors(6), t in prop::collection::vec(-1.0..1.0f64, 3)) {
        let (r, e) = instance(&vs);
        let set = cluster_comments(&r, &e, f64::NEG_INFINITY, SimilarityMetric::Dot).unwrap();
        let target = EmbeddingVector::new(t).unwrap();
        let loss = clus_loss(&set.clusters[0], &target, &e).unwrap();
        prop_assert!(loss >= 0.0);
        let all_equal = set.clusters[0].member_ids.iter().all(|id| e[id].sq_dist(&target).unwrap() <= 1e-9);
        prop_assert_eq!(loss <= 1e-9, all_equal);

        let same: HashMap<String, EmbeddingVector> = e.keys().map(|k| (k.clone(), target.clone())).collect();
        prop_assert_eq!(clus_loss(&set.clusters[0], &target, &same).unwrap(), 0.0);
    }

    #[test]
    fn gen_loss_ignores_token_labels(lps in prop::collection::vec(-20.0..0.0f64, 1..30)) {
        let a = TokenLogProbs::new((0..lps.len()).map(|i| format!("t{i}")).collect(), lps.clone()).unwrap();
        let b = TokenLogProbs::new((0..lps.len()).map(|i| format!("other{}", i * 7)).collect(), lps).unwrap();
        prop_assert_eq!(gen_loss(&a).unwrap(), gen_loss(&b).unwrap());
    }

    #[test]
    fn gold_score_is_at_least_target_entropy(
        pairs in prop::collection::vec((-5.0..5.0f64, -20.0..0.0f64), 1..20),
    ) {
        let (s, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let g = gold_score(&s, &l, 1.0, 1.0).unwrap();
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = l.iter().map(|x| (x - m).exp()).sum();
        let entropy: f64 = l.iter().map(|x| {
            let p = (x - m).exp() / z;
            if p > 0.0 { -p * p.ln() } else { 0.0 }
        }).sum();
        prop_assert!(g >= entropy - 1e-9);
    }

    #[test]
    fn gold_score_is_shift_invariant(
        pairs in prop::collection::vec((-5.0..5.0f64, -20.0..0.0f64), 1..20),
        c in -50.0..50.0f64,
    ) {
        let (s, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let a = gold_score(&s, &l, 1.0, 1.0).unwrap();
        let b = gold_score(&shifted, &l, 1.0, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn combined_loss_is_linear_in_each_component(
        x in 0.0..10.0f64, y in 0.0..10.0f64, z in 0.0..10.0f64,
        dx in 0.0..5.0f64, d in 0.0..=1.0f64,
    ) {
        let base = combined_loss(x, y, z, d).unwrap().total;
        let a = combined_loss(x + dx, y, z, d).unwrap().total;
        let b = combined_loss(x, y + dx, z, d).unwrap().total;
        let c = combined_loss(x, y, z + dx, d).unwrap().total;
        prop_assert!((a - base - (1.0 - d) * dx).abs() < 1e-9);
        prop_assert!((b - base - (1.0 - d) * dx).abs() < 1e-9);
        prop_assert!((c - base - d * dx).abs() < 1e-9);
    }
}

/// Co-membership is not monotone in lambda once three comments interact:
/// at the higher threshold `b` seeds its own cluster and `c` can join it,
/// while at the lower one `b` is absorbed by `a` and `c` is kept apart.
#[test]
fn co_membership_can_appear_at_higher_lambda() {
    let vs = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![-1.0, 2.0]];
    let (r, e) = instance(&vs);
    let pair = ("c1".to_string(), "c2".to_string());
    let low = cluster_comments(&r, &e, 0.5, SimilarityMetric::Dot).unwrap();
    let high = cluster_comments(&r, &e, 0.9, SimilarityMetric::Dot).unwrap();
    assert!(!co_members(&low).contains(&pair));
    assert!(co_members(&high).contains(&pair));
}
