//! Run configuration: a versioned TOML file, overridden by command-line flags.
//!
//! ```toml
//! version = 1
//! corpus = "fixtures/corpus.jsonl"
//! metric = "dot"
//! d = 0.5
//! concurrency = 4
//!
//! [encoder]
//! kind = "mock"          # or "http"
//! seed = 0
//! dim = 256
//! norm = 1.4142135623730951
//!
//! [generator]
//! kind = "extractive"    # or "transcript", "http"
//!
//! [thresholds]
//! retrieval = 1.0
//! lambda = 1.2
//! ```
//!
//! Secrets never live in the file: bearer tokens are read from the
//! environment variables named by `token_env`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kpq_core::clustering::DEFAULT_LAMBDA;
use kpq_core::lossbook::DEFAULT_DAMPING;
use kpq_core::retrieval::DEFAULT_RETRIEVAL_THRESHOLD;
use kpq_core::vectorspace::DEFAULT_MOCK_NORM;
use kpq_core::SimilarityMetric;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_MOCK_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub seed: u64,
    pub dim: usize,
    pub norm: f64,
    pub url: Option<String>,
    pub token_env: String,
    pub timeout_secs: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Http,
            seed: 0,
            dim: DEFAULT_MOCK_DIM,
            norm: DEFAULT_MOCK_NORM,
            url: None,
            token_env: "KPQ_ENCODER_TOKEN".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Extractive,
    Transcript,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub transcript: Option<PathBuf>,
    pub url: Option<String>,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub retries: usize,
    pub max_kps: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Http,
            transcript: None,
            url: None,
            model: "default".into(),
            token_env: "KPQ_GENERATOR_TOKEN".into(),
            timeout_secs: 120,
            retries: 2,
            max_kps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub retrieval: f64,
    pub lambda: f64,
    /// Gold-match threshold; falls back to `lambda`.
    pub gold: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            retrieval: DEFAULT_RETRIEVAL_THRESHOLD,
            lambda: DEFAULT_LAMBDA,
            gold: None,
        }
    }
}

impl Thresholds {
    pub fn gold(&self) -> f64 {
        self.gold.unwrap_or(self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub corpus: Option<PathBuf>,
    /// Output directory; left out of the manifest echo.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub generator: GeneratorConfig,
    pub thresholds: Thresholds,
    pub metric: SimilarityMetric,
    pub d: f64,
    pub tau_lm: f64,
    pub tau_ret: f64,
    pub cache_dir: Option<PathBuf>,
    pub concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            corpus: None,
            out: None,
            encoder: EncoderConfig::default(),
            generator: GeneratorConfig::default(),
            thresholds: Thresholds::default(),
            metric: SimilarityMetric::Dot,
            d: DEFAULT_DAMPING,
            tau_lm: 1.0,
            tau_ret: 1.0,
            cache_dir: None,
            concurrency: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            bail!(
                "config {} has version {}, expected {CONFIG_VERSION}",
                path.display(),
                cfg.version
            );
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("retrieval threshold", t.retrieval),
            ("lambda", t.lambda),
            ("gold threshold", t.gold()),
        ] {
            if !v.is_finite() {
                bail!("{name} must be finite, got {v}");
            }
        }
        if !(0.0..=1.0).contains(&self.d) {
            bail!("d must lie in [0, 1], got {}", self.d);
        }
        if self.encoder.dim < 2 {
            bail!("encoder dim must be at least 2, got {}", self.encoder.dim);
        }
        if !(self.encoder.norm > 0.0 && self.encoder.norm.is_finite()) {
            bail!("encoder norm must be positive, got {}", self.encoder.norm);
        }
        for (name, v) in [("tau_lm", self.tau_lm), ("tau_ret", self.tau_ret)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if self.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        Ok(())
    }
}
