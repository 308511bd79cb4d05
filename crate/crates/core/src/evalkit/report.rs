//! Per-query evaluation and the macro-averaged report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matching::{judged_matches, match_prf, MatchJudgment, Pair};
use super::rouge::{rouge_max_avg, RougeVariant};
use super::{
    quant_err, redundancy, soft_f1, soft_precision, soft_recall, EvalError, SimilarityScorer,
};
use crate::retrieval::{precision_at_k, RetrievalResult, TopK};
use crate::summarizer::KpRecord;

pub const DEFAULT_VOTE_RULE: f64 = 0.6;
pub const DEFAULT_TOP_K: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub scorer: String,
    pub vote_rule: f64,
    pub top_k: Vec<usize>,
}

impl ReportConfig {
    pub fn new(scorer: &dyn SimilarityScorer) -> Self {
        Self {
            scorer: scorer.name(),
            vote_rule: DEFAULT_VOTE_RULE,
            top_k: DEFAULT_TOP_K.to_vec(),
        }
    }
}

/// Everything known about one query at evaluation time.
#[derive(Debug, Clone, Default)]
pub struct QueryInput {
    pub query_id: String,
    pub generated: Vec<KpRecord>,
    pub references: Vec<String>,
    pub retrieval: Option<RetrievalResult>,
    pub relevant: Option<HashSet<String>>,
    /// Match judgments whose `kp_id` is the generated record's cluster id.
    pub judgments: Vec<MatchJudgment>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub n_generated: usize,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub rouge_l: Option<f64>,
    pub soft_precision: Option<f64>,
    pub soft_recall: Option<f64>,
    pub soft_f1: Option<f64>,
    pub redundancy: Option<f64>,
    pub match_precision: Option<f64>,
    pub match_recall: Option<f64>,
    pub match_f1: Option<f64>,
    pub quant_err: Option<f64>,
    /// Keyed `"5"`, `"10"`, ..., `"all"`.
    pub precision_at: BTreeMap<String, f64>,
}

fn optional(r: Result<f64, EvalError>) -> Result<Option<f64>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::EmptySet(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics for one query. Metrics whose inputs are missing or empty are `None`.
pub fn evaluate_query(
    input: &QueryInput,
    scorer: &dyn SimilarityScorer,
    config: &ReportConfig,
) -> Result<QueryMetrics, EvalError> {
    let gen: Vec<String> = input
        .generated
        .iter()
        .map(|r| r.key_point.clone())
        .collect();
    let refs = &input.references;
    let mut m = QueryMetrics {
        query_id: input.query_id.clone(),
        n_generated: gen.len(),
        rouge1: optional(rouge_max_avg(&gen, refs, RougeVariant::R1))?,
        rouge2: optional(rouge_max_avg(&gen, refs, RougeVariant::R2))?,
        rouge_l: optional(rouge_max_avg(&gen, refs, RougeVariant::RL))?,
        soft_precision: optional(soft_precision(&gen, refs, scorer))?,
        soft_recall: optional(soft_recall(&gen, refs, scorer))?,
        redundancy: optional(redundancy(&gen, scorer))?,
        ..Default::default()
    };
    if let (Some(p), Some(r)) = (m.soft_precision, m.soft_recall) {
        m.soft_f1 = Some(soft_f1(p, r));
    }

    if !input.judgments.is_empty() {
        let predicted: HashSet<Pair> = input
            .generated
            .iter()
            .flat_map(|r| {
                r.matched_comment_ids
                    .iter()
                    .map(move |c| (r.cluster_id.to_string(), c.clone()))
            })
            .collect();
        let gold = judged_matches(&input.judgments, config.vote_rule);
        let prf = match_prf(&input.judgments, &predicted, &gold, config.vote_rule);
        m.match_precision = Some(prf.precision);
        m.match_recall = Some(prf.recall);
        m.match_f1 = Some(prf.f1);

        let judged_kps: HashSet<&str> = input.judgments.iter().map(|j| j.kp_id.as_str()).collect();
        let pairs: Vec<(usize, usize)> = input
            .generated
            .iter()
            .filter(|r| judged_kps.contains(r.cluster_id.to_string().as_str()))
            .map(|r| {
                let kp = r.cluster_id.to_string();
                let actual = gold.iter().filter(|(k, _)| *k == kp).count();
                (r.prevalence, actual)
            })
            .collect();
        m.quant_err = optional(quant_err(&pairs))?;
    }

    if let (Some(ranked), Some(relevant)) = (&input.retrieval, &input.relevant) {
        if !ranked.is_empty() {
            let ks = config
                .top_k
                .iter()
                .map(|&k| (k.to_string(), TopK::K(k)))
                .chain([("all".to_string(), TopK::All)]);
            for (name, k) in ks {
                if let Ok(p) = precision_at_k(ranked, relevant, k) {
                    m.precision_at.insert(name, p.value);
                }
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub per_query: Vec<QueryMetrics>,
    /// Mean over the queries where each metric is defined.
    pub macro_avg: QueryMetrics,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vs: Vec<f64> = xs.flatten().collect();
    if vs.is_empty() {
        None
    } else {
        Some(vs.iter().sum::<f64>() / vs.len() as f64)
    }
}

pub fn macro_average(per_query: &[QueryMetrics]) -> QueryMetrics {
    macro_rules! avg {
        ($field:ident) => {
            mean(per_query.iter().map(|q| q.$field))
        };
    }
    let keys: std::collections::BTreeSet<&String> = per_query
        .iter()
        .flat_map(|q| q.precision_at.keys())
        .collect();
    let precision_at = keys
        .into_iter()
        .filter_map(|k| {
            mean(per_query.iter().map(|q| q.precision_at.get(k).copied())).map(|v| (k.clone(), v))
        })
        .collect();
    QueryMetrics {
        query_id: "macro".into(),
        n_generated: per_query.iter().map(|q| q.n_generated).sum(),
        rouge1: avg!(rouge1),
        rouge2: avg!(rouge2),
        rouge_l: avg!(rouge_l),
        soft_precision: avg!(soft_precision),
        soft_recall: avg!(soft_recall),
        soft_f1: avg!(soft_f1),
        redundancy: avg!(redundancy),
        match_precision: avg!(match_precision),
        match_recall: avg!(match_recall),
        match_f1: avg!(match_f1),
        quant_err: avg!(quant_err),
        precision_at,
    }
}

pub fn evaluate(
    inputs: &[QueryInput],
    scorer: &dyn SimilarityScorer,
    config: ReportConfig,
) -> Result<EvalReport, EvalError> {
    let per_query = inputs
        .iter()
        .map(|q| evaluate_query(q, scorer, &config))
        .collect::<Result<Vec<_>, _>>()?;
    let macro_avg = macro_average(&per_query);
    Ok(EvalReport {
        config,
        per_query,
        macro_avg,
    })
}

/// Maps a 1 to 5 rating onto `[0, 1]`.
pub fn rescale_rating(score: f64) -> Option<f64> {
    (1.0..=5.0).contains(&score).then(|| (score - 1.0) / 4.0)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl EvalReport {
    /// Plain-text table: one row per query, macro average last.
    pub fn render_table(&self) -> String {
        let mut pk: Vec<&String> = self.macro_avg.precision_at.keys().collect();
        pk.sort_by_key(|k| k.parse::<usize>().unwrap_or(usize::MAX));
        let mut header: Vec<String> = [
            "query", "#KP", "R-1", "R-2", "R-L", "sP", "sR", "sF1", "RD", "mP", "mR", "mF1",
            "QuantErr",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(pk.iter().map(|k| format!("P@{k}")));

        let row = |q: &QueryMetrics| -> Vec<String> {
            let mut r = vec![
                q.query_id.clone(),
                q.n_generated.to_string(),
                cell(q.rouge1),
                cell(q.rouge2),
                cell(q.rouge_l),
                cell(q.soft_precision),
                cell(q.soft_recall),
                cell(q.soft_f1),
                cell(q.redundancy),
                cell(q.match_precision),
                cell(q.match_recall),
                cell(q.match_f1),
                q.quant_err
                    .map_or_else(|| "-".into(), |x| format!("{x:.2}")),
            ];
            r.extend(pk.iter().map(|k| cell(q.precision_at.get(*k).copied())));
            r
        };
        let mut rows: Vec<Vec<String>> = vec![header];
        rows.extend(self.per_query.iter().map(row));
        rows.push(row(&self.macro_avg));

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scorer: {}  vote rule: {}",
            self.config.scorer, self.config.vote_rule
        );
        let last = rows.len() - 1;
        for (i, r) in rows.iter().enumerate() {
            if i == last {
                let rule: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(rule));
            }
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(" | "));
            if i == 0 {
                let rule: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(rule));
            }
        }
        out
    }
}
