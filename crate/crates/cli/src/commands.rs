use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use kpq_core::corpus::{corpus_stats, load_corpus};
use kpq_core::evalkit::bradley_terry::{bradley_terry_by_dimension, load_comparisons};
use kpq_core::evalkit::matching::load_judgments;
use kpq_core::evalkit::{
    evaluate, EvalError, ExactMatch, QueryInput, ReportConfig, SimilarityScorer, TokenOverlapF1,
};
use kpq_core::http::{Endpoint, HttpScorer};
use kpq_core::pipeline::{
    cluster_stage, load_replay, replay_losses, retrieve_stage, summarize_stage, LossConfig,
    PipelineError, StageConfig,
};
use kpq_core::retrieval::{load_relevance, Relevance};
use kpq_core::summarizer::{GenerationOptions, SummarizeError, DEFAULT_VERBS};
use kpq_core::{Corpus, KpSummary, RetrievalResult};
use rayon::prelude::*;

use crate::backends::Backends;
use crate::config::RunConfig;
use crate::output::{write_json, write_manifest};
use crate::CommonArgs;

/// An error with its process exit code: 1 for invalid input, 2 for a
/// failing backend.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

trait OrFail<T> {
    fn invalid(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }
}

/// The error chain joined by `: `, skipping causes whose text the previous
/// message already includes.
pub fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if last.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
        last = text;
    }
    out
}

fn pipeline_failure(qid: &str, e: PipelineError) -> Failure {
    Failure {
        code: if e.is_backend() { 2 } else { 1 },
        error: anyhow!(e).context(format!("query {qid}")),
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| anyhow!("{flag} is required"))
        .invalid()
}

fn select_queries(corpus: &Corpus, wanted: &[String]) -> Outcome<Vec<String>> {
    if wanted.is_empty() {
        return Ok(corpus.queries.keys().cloned().collect());
    }
    for q in wanted {
        if !corpus.queries.contains_key(q) {
            return Err(anyhow!("unknown query `{q}`")).invalid();
        }
    }
    Ok(wanted.to_vec())
}

fn stage_config(cfg: &RunConfig) -> StageConfig {
    StageConfig {
        threshold: cfg.thresholds.retrieval,
        lambda: cfg.thresholds.lambda,
        metric: cfg.metric,
        generation: GenerationOptions {
            retries: cfg.generator.retries,
            max_kps: cfg.generator.max_kps,
            verbs: DEFAULT_VERBS.iter().map(|s| s.to_string()).collect(),
        },
    }
}

pub fn stats(common: &CommonArgs) -> Outcome {
    let cfg = common.resolve().invalid()?;
    let path = require(&cfg.corpus, "--corpus")?;
    let corpus = load_corpus(path).invalid()?;
    let report = corpus_stats(&corpus);
    print!("{report}");
    if let Some(out) = &cfg.out {
        write_json(&out.join("stats.json"), &report).invalid()?;
        write_manifest(out, "stats", &cfg, std::slice::from_ref(path)).invalid()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Retrieve,
    Cluster,
    Summarize,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Self::Retrieve => "retrieve",
            Self::Cluster => "cluster",
            Self::Summarize => "summarize",
        }
    }
}

fn build_pool(cfg: &RunConfig) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency)
        .build()
        .invalid()
}

/// Runs the stages for one query, writing each stage's output as soon as it
/// exists so a later failure leaves earlier files in place.
fn run_one(
    qid: &str,
    corpus: &Corpus,
    backends: &Backends,
    stage_cfg: &StageConfig,
    stage: Stage,
    out: &Path,
) -> Outcome<String> {
    let query = &corpus.queries[qid];
    let dir = out.join(qid);
    let fail = |e: PipelineError| pipeline_failure(qid, e);

    let retrieved =
        retrieve_stage(query, corpus, backends.encoder.as_ref(), stage_cfg).map_err(fail)?;
    write_json(&dir.join("retrieval.json"), &retrieved.result).invalid()?;
    let mut line = format!("{qid}: {} retrieved", retrieved.result.len());
    if retrieved.result.empty {
        line.push_str(" (no comment reached the threshold)");
    }
    if stage == Stage::Retrieve {
        return Ok(line);
    }

    let clusters = cluster_stage(&retrieved, stage_cfg).map_err(fail)?;
    write_json(&dir.join("clusters.json"), &clusters).invalid()?;
    let multi = {
        let mut seen = HashSet::new();
        let mut multi = HashSet::new();
        for c in &clusters.clusters {
            for id in &c.member_ids {
                if !seen.insert(id) {
                    multi.insert(id);
                }
            }
        }
        multi.len()
    };
    let _ = write!(line, ", {} clusters", clusters.clusters.len());
    if multi > 0 {
        let _ = write!(line, " ({multi} in more than one cluster)");
    }
    if stage == Stage::Cluster {
        return Ok(line);
    }

    let summary = match summarize_stage(
        query,
        &clusters,
        corpus,
        backends.generator.as_ref(),
        stage_cfg,
    ) {
        Ok(s) => s,
        Err(e) => {
            if let PipelineError::Summarize(
                SummarizeError::Partial { completed, .. }
                | SummarizeError::InvalidLabel { completed, .. },
            ) = &e
            {
                write_json(&dir.join("partial_records.json"), completed).invalid()?;
            }
            return Err(fail(e));
        }
    };
    write_summary(&dir, &summary).invalid()?;
    let _ = write!(line, ", {} key points", summary.records.len());
    Ok(line)
}

fn write_summary(dir: &Path, summary: &KpSummary) -> anyhow::Result<()> {
    write_json(&dir.join("summary.json"), &summary.parsed())?;
    crate::output::write_file(&dir.join("summary.txt"), summary.render().as_bytes())?;
    write_json(&dir.join("records.json"), summary)
}

pub fn pipeline(common: &CommonArgs, stage: Stage) -> Outcome {
    let cfg = common.resolve().invalid()?;
    let corpus_path = require(&cfg.corpus, "--corpus")?;
    let out = require(&cfg.out, "--out")?;
    let corpus = load_corpus(corpus_path).invalid()?;
    let ids = select_queries(&corpus, &common.queries)?;
    let generating = stage == Stage::Summarize;
    let backends = Backends::build(
        &cfg,
        generating,
        generating && common.record_transcript.is_some(),
    )
    .invalid()?;

    let mut inputs = vec![corpus_path.clone()];
    if generating {
        if let Some(t) = &cfg.generator.transcript {
            if cfg.generator.kind == crate::config::GeneratorKind::Transcript {
                inputs.push(t.clone());
            }
        }
    }
    write_manifest(out, stage.name(), &cfg, &inputs).invalid()?;

    let stage_cfg = stage_config(&cfg);
    let pool = build_pool(&cfg)?;
    let results: Vec<Outcome<String>> = pool.install(|| {
        ids.par_iter()
            .map(|qid| run_one(qid, &corpus, &backends, &stage_cfg, stage, out))
            .collect()
    });

    if let Some(path) = &common.record_transcript {
        let n = backends.write_transcript(path).invalid()?;
        eprintln!("recorded {n} transcript entries to {}", path.display());
    }
    if let Some((e, g)) = backends.cache_misses() {
        eprintln!("backend calls: encoder {e}, generator {g}");
    }
    // The first failure is reported by the caller; later ones are printed here.
    let mut first_err: Option<Failure> = None;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(f) if first_err.is_some() => eprintln!("error: {}", describe(&f.error)),
            Err(f) => first_err = Some(f),
        }
    }
    match first_err {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding `<query id>/records.json` from a summarize run
    /// (defaults to --out)
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Key point to comment match judgments (JSONL)
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// Comment relevance judgments for precision@k (JSONL)
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Built-in similarity scorer: exact or token-f1
    #[arg(long, default_value = "token-f1")]
    pub scorer: String,
    /// External similarity scorer endpoint; overrides --scorer
    #[arg(long)]
    pub scorer_url: Option<String>,
    /// Share of positive votes needed for a match
    #[arg(long, default_value_t = 0.6)]
    pub vote_rule: f64,
    /// Cut-offs for precision@k, comma separated
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub top_k: Vec<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn eval(common: &CommonArgs, args: &EvalArgs) -> Outcome {
    let cfg = common.resolve().invalid()?;
    let corpus_path = require(&cfg.corpus, "--corpus")?;
    let out = require(&cfg.out, "--out")?;
    let preds = args.predictions.clone().unwrap_or_else(|| out.clone());
    let corpus = load_corpus(corpus_path).invalid()?;
    let ids = select_queries(&corpus, &common.queries)?;
    if !(0.0..=1.0).contains(&args.vote_rule) {
        return Err(anyhow!("--vote-rule must lie in [0, 1]")).invalid();
    }
    if args.top_k.contains(&0) {
        return Err(anyhow!("--top-k values must be positive")).invalid();
    }

    let scorer: Box<dyn SimilarityScorer> = match (&args.scorer_url, args.scorer.as_str()) {
        (Some(url), _) => Box::new(HttpScorer {
            endpoint: Endpoint::new(url.clone()).with_token_env("KPQ_SCORER_TOKEN"),
            batch_size: 64,
        }),
        (None, "exact") => Box::new(ExactMatch),
        (None, "token-f1") => Box::new(TokenOverlapF1),
        (None, other) => return Err(anyhow!("unknown scorer `{other}`")).invalid(),
    };

    let judgments = match &args.judgments {
        Some(p) => load_judgments(BufReader::new(File::open(p).invalid()?))
            .map_err(|e| anyhow!("{}: {e}", p.display()))
            .invalid()?,
        None => Vec::new(),
    };
    let relevance = match &args.relevance {
        Some(p) => load_relevance(p)
            .map_err(|e| anyhow!("{}: {e}", p.display()))
            .invalid()?,
        None => Vec::new(),
    };

    let mut inputs = Vec::new();
    let mut files = vec![corpus_path.clone()];
    for qid in &ids {
        let records = preds.join(qid).join("records.json");
        if !records.exists() {
            continue;
        }
        let summary: KpSummary = read_json(&records).invalid()?;
        let retrieval_path = preds.join(qid).join("retrieval.json");
        let retrieval: Option<RetrievalResult> = if retrieval_path.exists() {
            Some(read_json(&retrieval_path).invalid()?)
        } else {
            None
        };
        let labelled: Vec<_> = relevance.iter().filter(|r| &r.query_id == qid).collect();
        let relevant = (!labelled.is_empty()).then(|| {
            labelled
                .iter()
                .filter(|r| r.label == Relevance::Relevant)
                .map(|r| r.comment_id.clone())
                .collect::<HashSet<_>>()
        });
        inputs.push(QueryInput {
            query_id: qid.clone(),
            generated: summary.records,
            references: corpus.queries[qid].reference_kps.clone(),
            retrieval,
            relevant,
            judgments: judgments
                .iter()
                .filter(|j| &j.query_id == qid)
                .cloned()
                .collect(),
        });
        files.push(records);
    }
    if inputs.is_empty() {
        return Err(anyhow!("no predictions found under {}", preds.display())).invalid();
    }
    files.extend(args.judgments.iter().cloned());
    files.extend(args.relevance.iter().cloned());

    let config = ReportConfig {
        scorer: scorer.name(),
        vote_rule: args.vote_rule,
        top_k: args.top_k.clone(),
    };
    let report = evaluate(&inputs, scorer.as_ref(), config).map_err(|e| match e {
        EvalError::Backend(_) => Failure {
            code: 2,
            error: e.into(),
        },
        other => Failure {
            code: 1,
            error: other.into(),
        },
    })?;
    let table = report.render_table();
    print!("{table}");
    write_json(&out.join("report.json"), &report).invalid()?;
    crate::output::write_file(&out.join("report.txt"), table.as_bytes()).invalid()?;
    write_manifest(out, "eval", &cfg, &files).invalid()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BtrankArgs {
    /// Pairwise comparisons, one `{"winner","loser","dimension"}` per line
    #[arg(long)]
    pub comparisons: PathBuf,
}

pub fn btrank(common: &CommonArgs, args: &BtrankArgs) -> Outcome {
    let cfg = common.resolve().invalid()?;
    let file = File::open(&args.comparisons)
        .with_context(|| format!("opening {}", args.comparisons.display()))
        .invalid()?;
    let comparisons = load_comparisons(BufReader::new(file))
        .map_err(|e| anyhow!("{}: {e}", args.comparisons.display()))
        .invalid()?;
    let rankings = bradley_terry_by_dimension(&comparisons).invalid()?;
    for (dim, r) in &rankings {
        let title = if dim.is_empty() {
            "(all)"
        } else {
            dim.as_str()
        };
        println!("{title}");
        for (i, (system, strength)) in r.ranked().into_iter().enumerate() {
            let flag = if r.infinite.iter().any(|s| s == system) {
                "  unbounded"
            } else {
                ""
            };
            println!("  {:>2}. {system:<20} {strength:>8.3}{flag}", i + 1);
        }
        if r.degenerate {
            println!("  note: some systems never lost to the rest; strengths diverge");
        } else if !r.converged {
            println!("  note: iteration limit reached before convergence");
        }
    }
    if let Some(out) = &cfg.out {
        write_json(&out.join("btrank.json"), &rankings).invalid()?;
        write_manifest(out, "btrank", &cfg, std::slice::from_ref(&args.comparisons)).invalid()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    /// Per-cluster generator log-probabilities, one record per line
    #[arg(long)]
    pub replay: PathBuf,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn losses(common: &CommonArgs, args: &LossesArgs) -> Outcome {
    let cfg = common.resolve().invalid()?;
    let corpus_path = require(&cfg.corpus, "--corpus")?;
    let out = require(&cfg.out, "--out")?;
    let corpus = load_corpus(corpus_path).invalid()?;
    let ids = select_queries(&corpus, &common.queries)?;
    let file = File::open(&args.replay)
        .with_context(|| format!("opening {}", args.replay.display()))
        .invalid()?;
    let replay = load_replay(BufReader::new(file))
        .map_err(|e| anyhow!("{}: {e}", args.replay.display()))
        .invalid()?;
    let backends = Backends::encoder_only(&cfg).invalid()?;
    write_manifest(
        out,
        "losses",
        &cfg,
        &[corpus_path.clone(), args.replay.clone()],
    )
    .invalid()?;

    let stage_cfg = stage_config(&cfg);
    let loss_cfg = LossConfig {
        gold_threshold: cfg.thresholds.gold(),
        d: cfg.d,
        tau_lm: cfg.tau_lm,
        tau_ret: cfg.tau_ret,
    };
    println!(
        "{:<10} {:>7} {:>10} {:>10} {:>10} {:>10}",
        "query", "cluster", "clus", "gold", "gen", "combined"
    );
    for qid in &ids {
        let query = &corpus.queries[qid];
        let fail = |e: PipelineError| pipeline_failure(qid, e);
        let retrieved =
            retrieve_stage(query, &corpus, backends.encoder.as_ref(), &stage_cfg).map_err(fail)?;
        let clusters = cluster_stage(&retrieved, &stage_cfg).map_err(fail)?;
        let rows = replay_losses(query, &retrieved, &clusters, &replay, &loss_cfg).map_err(fail)?;
        let dir = out.join(qid);
        write_json(&dir.join("retrieval.json"), &retrieved.result).invalid()?;
        write_json(&dir.join("clusters.json"), &clusters).invalid()?;
        write_json(&dir.join("losses.json"), &rows).invalid()?;
        for r in &rows {
            println!(
                "{:<10} {:>7} {:>10} {:>10} {:>10} {:>10}",
                qid,
                r.cluster_id,
                cell(r.l_clus),
                cell(r.gold_score),
                cell(r.l_gen),
                cell(r.combined.as_ref().map(|c| c.total)),
            );
        }
    }
    Ok(())
}
