use std::collections::HashMap;

use indexmap::IndexMap;
use kpq_core::evalkit::bradley_terry::bradley_terry;
use kpq_core::evalkit::rouge::rouge;
use kpq_core::evalkit::{
    quant_err, redundancy, soft_precision, soft_recall, ExactMatch, PairwiseComparison,
    RougeVariant, SimilarityScorer, TokenOverlapF1,
};
use kpq_core::retrieval::rank_scores;
use kpq_core::summarizer::{
    generate_summary, postprocess_summary, render_summary, ExtractiveGenerator, GenerationOptions,
    GenerationRequest, Generator,
};
use kpq_core::vectorspace::BackendError;
use kpq_core::{cluster_comments, Comment, EmbeddingVector, KpRecord, Query, SimilarityMetric};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kp_text() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z][a-z0-9]{0,8}", 1..8).prop_map(|w| w.join(" "))
}

fn records() -> impl Strategy<Value = Vec<KpRecord>> {
    prop::collection::vec((kp_text(), 1..500usize), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (key_point, prevalence))| KpRecord {
                key_point,
                prevalence,
                cluster_id: i,
                matched_comment_ids: Vec::new(),
                generated_prevalence: None,
                note: None,
            })
            .collect()
    })
}

/// Records every prompt it is sent while delegating to the extractive mock.
struct PromptLog {
    prompts: std::sync::Mutex<Vec<String>>,
}

impl Generator for PromptLog {
    fn fingerprint(&self) -> String {
        "log".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        ExtractiveGenerator.complete(request)
    }
}

fn kp_sets() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let words = prop::collection::vec(
        prop::sample::select(vec![
            "good", "bad", "battery", "lens", "heavy", "light", "a",
        ]),
        1..4,
    )
    .prop_map(|w| w.join(" "));
    (
        prop::collection::vec(words.clone(), 1..6),
        prop::collection::vec(words, 1..6),
    )
}

proptest! {
    #[test]
    fn render_parse_render_is_a_fixed_point(
        preamble in prop::option::of("[A-Z][a-z ]{0,30}[a-z.]"),
        recs in records(),
    ) {
        let pre = preamble.unwrap_or_default();
        let text = render_summary(&pre, &recs);
        let parsed = postprocess_summary(&text);
        prop_assert!(parsed.errors.is_empty());
        prop_assert_eq!(parsed.preamble.as_str(), pre.trim());
        let back: Vec<KpRecord> = parsed
            .records
            .iter()
            .zip(&recs)
            .map(|(p, r)| KpRecord { key_point: p.key_point.clone(), prevalence: p.prevalence, ..r.clone() })
            .collect();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(render_summary(&parsed.preamble, &back), text);
    }

    #[test]
    fn next_kp_prompts_carry_prior_key_points(vs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..7), lambda in 0.0..1.5f64) {
        let n = vs.len();
        let comments: IndexMap<String, Comment> = (0..n)
            .map(|i| (format!("c{i}"), Comment::new(format!("c{i}"), "p", "r", format!("Opinion number {i}."))))
            .collect();
        let emb: HashMap<String, EmbeddingVector> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("c{i}"), EmbeddingVector::new(v.clone()).unwrap()))
            .collect();
        let ranked = rank_scores("q", (0..n).map(|i| (format!("c{i}"), (n - i) as f64)), f64::NEG_INFINITY);
        let clusters = cluster_comments(&ranked, &emb, lambda, SimilarityMetric::Dot).unwrap();
        let log = PromptLog { prompts: Default::default() };
        let query = Query::new("q", "p", "What do people think?");
        let summary = generate_summary(&log, &query, &clusters, &comments, &GenerationOptions::default()).unwrap();

        // one record per cluster, prevalence = size, ordered
        let mut ids: Vec<usize> = summary.records.iter().map(|r| r.cluster_id).collect();
        ids.sort();
        prop_assert_eq!(ids, (0..clusters.clusters.len()).collect::<Vec<_>>());
        for r in &summary.records {
            prop_assert_eq!(r.prevalence, clusters.get(r.cluster_id).unwrap().len());
        }
        for w in summary.records.windows(2) {
            prop_assert!(w[0].prevalence > w[1].prevalence
                || (w[0].prevalence == w[1].prevalence && w[0].cluster_id < w[1].cluster_id));
        }

        // prompt i lists exactly the i-1 accepted key points, in order
        let prompts = log.prompts.lock().unwrap().clone();
        prop_assert_eq!(prompts.len(), clusters.clusters.len());
        let order: Vec<usize> = clusters.by_size().iter().map(|c| c.id).collect();
        let kp_of: HashMap<usize, &str> = summary.records.iter().map(|r| (r.cluster_id, r.key_point.as_str())).collect();
        for (i, p) in prompts.iter().enumerate() {
            let section = p.split("### Key points written so far\n").nth(1).unwrap();
            let section = section.split("\n\n### Next").next().unwrap();
            let expected: Vec<String> = if i == 0 {
                vec!["(none yet)".to_string()]
            } else {
                order[..i].iter().enumerate().map(|(j, id)| format!("{}. {}", j + 1, kp_of[id])).collect()
            };
            prop_assert_eq!(section.lines().map(String::from).collect::<Vec<_>>(), expected);
        }
    }

    #[test]
    fn soft_precision_and_recall_are_dual((a, b) in kp_sets()) {
        for f in [&ExactMatch as &dyn SimilarityScorer, &TokenOverlapF1] {
            prop_assert_eq!(soft_precision(&a, &b, f).unwrap(), soft_recall(&b, &a, f).unwrap());
        }
    }

    #[test]
    fn metrics_stay_in_range((a, b) in kp_sets()) {
        for f in [&ExactMatch as &dyn SimilarityScorer, &TokenOverlapF1] {
            for v in [soft_precision(&a, &b, f).unwrap(), soft_recall(&a, &b, f).unwrap(), redundancy(&a, f).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            let x = rouge(v, &a[0], &b[0]);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn redundancy_is_permutation_invariant((a, _) in kp_sets(), seed in any::<u64>()) {
        let mut shuffled = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        for f in [&ExactMatch as &dyn SimilarityScorer, &TokenOverlapF1] {
            let x = redundancy(&a, f).unwrap();
            let y = redundancy(&shuffled, f).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rouge_self_score_is_one(t in "\\PC{1,40}") {
        prop_assume!(!t.trim().is_empty());
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            prop_assert_eq!(rouge(v, &t, &t), 1.0);
        }
    }

    #[test]
    fn quant_err_obeys_triangle_inequality(
        xs in prop::collection::vec((0..50usize, 0..50usize, 0..50usize), 1..10),
    ) {
        let ab: Vec<(usize, usize)> = xs.iter().map(|&(a, b, _)| (a, b)).collect();
        let bc: Vec<(usize, usize)> = xs.iter().map(|&(_, b, c)| (b, c)).collect();
        let ac: Vec<(usize, usize)> = xs.iter().map(|&(a, _, c)| (a, c)).collect();
        let aa: Vec<(usize, usize)> = xs.iter().map(|&(a, _, _)| (a, a)).collect();
        let ba: Vec<(usize, usize)> = xs.iter().map(|&(a, b, _)| (b, a)).collect();
        prop_assert!(quant_err(&ac).unwrap() <= quant_err(&ab).unwrap() + quant_err(&bc).unwrap() + 1e-12);
        prop_assert_eq!(quant_err(&aa).unwrap(), 0.0);
        prop_assert_eq!(quant_err(&ab).unwrap(), quant_err(&ba).unwrap());
    }

    #[test]
    fn bradley_terry_is_relabeling_invariant(games in prop::collection::vec((0..4usize, 0..4usize), 10..60)) {
        let names = ["alpha", "bravo", "charlie", "delta"];
        let renamed = ["zulu", "yankee", "xray", "whiskey"];
        let mut cs = Vec::new();
        for &(w, l) in &games {
            if w != l {
                cs.push((w, l));
            }
        }
        // a full cycle keeps the graph strongly connected
        for i in 0..4 {
            cs.push((i, (i + 1) % 4));
        }
        let build = |labels: &[&str; 4]| -> Vec<PairwiseComparison> {
            cs.iter().map(|&(w, l)| PairwiseComparison { winner: labels[w].into(), loser: labels[l].into(), dimension: String::new() }).collect()
        };
        let a = bradley_terry(&build(&names)).unwrap();
        let b = bradley_terry(&build(&renamed)).unwrap();
        for i in 0..4 {
            let x = a.strength(names[i]).unwrap();
            let y = b.strength(renamed[i]).unwrap();
            prop_assert!((x - y).abs() < 1e-6 * x.max(1.0), "{} vs {}", x, y);
        }
    }
}

#[test]
fn bradley_terry_reproduces_empirical_win_rates() {
    let strengths = [4.0, 2.0, 1.0, 0.5];
    let names = ["s0", "s1", "s2", "s3"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cs = Vec::new();
    let mut wins = [[0usize; 4]; 4];
    for i in 0..4 {
        for j in (i + 1)..4 {
            for _ in 0..10_000 {
                let p = strengths[i] / (strengths[i] + strengths[j]);
                let (w, l) = if rng.random::<f64>() < p {
                    (i, j)
                } else {
                    (j, i)
                };
                wins[w][l] += 1;
                cs.push(PairwiseComparison {
                    winner: names[w].into(),
                    loser: names[l].into(),
                    dimension: String::new(),
                });
            }
        }
    }
    let r = bradley_terry(&cs).unwrap();
    assert!(r.converged);
    for i in 0..4 {
        for j in (i + 1)..4 {
            let empirical = wins[i][j] as f64 / (wins[i][j] + wins[j][i]) as f64;
            let model = r.win_probability(names[i], names[j]).unwrap();
            assert!(
                (empirical - model).abs() < 0.02,
                "{i} vs {j}: {empirical} vs {model}"
            );
        }
    }
}
