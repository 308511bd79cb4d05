mod backends;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kpq_core::SimilarityMetric;

use crate::config::{EncoderKind, GeneratorKind, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "kpq",
    version,
    about = "Quantified query-focused key point summaries of product reviews"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML configuration file (version = 1)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus JSONL file
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Restrict to these query ids (repeatable)
    #[arg(long = "query", global = true)]
    pub queries: Vec<String>,
    /// Deterministic offline encoder and extractive generator
    #[arg(long, global = true)]
    pub mock: bool,
    /// Replay generator replies from a transcript file
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Write every prompt hash and reply to this transcript file
    #[arg(long, global = true)]
    pub record_transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub norm: Option<f64>,
    #[arg(long, global = true)]
    pub encoder_url: Option<String>,
    #[arg(long, global = true)]
    pub generator_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Retrieval similarity threshold
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Clustering threshold
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Gold-cluster match threshold (defaults to lambda)
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub gold_threshold: Option<f64>,
    /// Similarity used for clustering: dot or cosine
    #[arg(long, global = true)]
    pub metric: Option<SimilarityMetric>,
    /// Weight of the generation loss in the combined loss
    #[arg(long, global = true)]
    pub d: Option<f64>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true)]
    pub max_kps: Option<usize>,
}

impl CommonArgs {
    /// Config file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.corpus {
            cfg.corpus = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        if self.mock {
            cfg.encoder.kind = EncoderKind::Mock;
            cfg.generator.kind = GeneratorKind::Extractive;
        }
        if let Some(t) = &self.transcript {
            cfg.generator.kind = GeneratorKind::Transcript;
            cfg.generator.transcript = Some(t.clone());
        }
        if let Some(u) = &self.encoder_url {
            cfg.encoder.kind = EncoderKind::Http;
            cfg.encoder.url = Some(u.clone());
        }
        if let Some(u) = &self.generator_url {
            cfg.generator.kind = GeneratorKind::Http;
            cfg.generator.url = Some(u.clone());
        }
        macro_rules! set {
            ($flag:ident => $($path:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($path).+ = v;
                }
            };
        }
        set!(seed => encoder.seed);
        set!(dim => encoder.dim);
        set!(norm => encoder.norm);
        set!(model => generator.model);
        set!(threshold => thresholds.retrieval);
        set!(lambda => thresholds.lambda);
        set!(metric => metric);
        set!(d => d);
        set!(concurrency => concurrency);
        if let Some(g) = self.gold_threshold {
            cfg.thresholds.gold = Some(g);
        }
        if let Some(p) = &self.cache_dir {
            cfg.cache_dir = Some(p.clone());
        }
        if let Some(m) = self.max_kps {
            cfg.generator.max_kps = Some(m);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print corpus statistics
    Stats,
    /// Rank query-relevant comments
    Retrieve,
    /// Retrieve, then group comments into opinion clusters
    Cluster,
    /// Retrieve, cluster and generate quantified key point summaries
    Summarize,
    /// Score summaries against references and judgments
    Eval(commands::EvalArgs),
    /// Rank systems from pairwise comparisons
    Btrank(commands::BtrankArgs),
    /// Recompute per-cluster training losses from replayed log-probabilities
    Losses(commands::LossesArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stats => commands::stats(&cli.common),
        Command::Retrieve => commands::pipeline(&cli.common, commands::Stage::Retrieve),
        Command::Cluster => commands::pipeline(&cli.common, commands::Stage::Cluster),
        Command::Summarize => commands::pipeline(&cli.common, commands::Stage::Summarize),
        Command::Eval(args) => commands::eval(&cli.common, args),
        Command::Btrank(args) => commands::btrank(&cli.common, args),
        Command::Losses(args) => commands::losses(&cli.common, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", commands::describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
