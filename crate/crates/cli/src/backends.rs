use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use kpq_core::cache::{CachingEncoder, CachingGenerator};
use kpq_core::http::{Endpoint, HttpEncoder, HttpGenerator};
use kpq_core::summarizer::{
    ExtractiveGenerator, Generator, RecordingGenerator, ScriptedGenerator, TranscriptEntry,
};
use kpq_core::{Encoder, MockEncoder};

use crate::config::{EncoderKind, GeneratorKind, RunConfig};

/// Encoder and generator for one run, with handles for cache statistics and
/// transcript recording.
pub struct Backends {
    pub encoder: Box<dyn Encoder>,
    pub generator: Box<dyn Generator>,
    encoder_cache: Option<Arc<CachingEncoder<Box<dyn Encoder>>>>,
    generator_cache: Option<Arc<CachingGenerator<Box<dyn Generator>>>>,
    recorder: Option<Arc<RecordingGenerator<Box<dyn Generator>>>>,
}

fn build_encoder(cfg: &RunConfig) -> Result<Box<dyn Encoder>> {
    let e = &cfg.encoder;
    Ok(match e.kind {
        EncoderKind::Mock => Box::new(MockEncoder::new(e.seed, e.dim).with_norm(e.norm)),
        EncoderKind::Http => {
            let Some(url) = &e.url else {
                bail!("no encoder configured: pass --mock or --encoder-url");
            };
            Box::new(HttpEncoder {
                endpoint: Endpoint::new(url.clone())
                    .with_token_env(&e.token_env)
                    .with_timeout(Duration::from_secs(e.timeout_secs)),
                dim: e.dim,
            })
        }
    })
}

fn build_generator(cfg: &RunConfig) -> Result<Box<dyn Generator>> {
    let g = &cfg.generator;
    Ok(match g.kind {
        GeneratorKind::Extractive => Box::new(ExtractiveGenerator),
        GeneratorKind::Transcript => {
            let path = g
                .transcript
                .as_ref()
                .context("generator kind is transcript but no transcript file is set")?;
            Box::new(ScriptedGenerator::load(path)?)
        }
        GeneratorKind::Http => {
            let Some(url) = &g.url else {
                bail!("no generator configured: pass --mock, --transcript or --generator-url");
            };
            Box::new(HttpGenerator {
                endpoint: Endpoint::new(url.clone())
                    .with_token_env(&g.token_env)
                    .with_timeout(Duration::from_secs(g.timeout_secs)),
                model: g.model.clone(),
            })
        }
    })
}

impl Backends {
    pub fn encoder_only(cfg: &RunConfig) -> Result<Self> {
        Self::build(cfg, false, false)
    }

    pub fn build(cfg: &RunConfig, with_generator: bool, record: bool) -> Result<Self> {
        let mut encoder = build_encoder(cfg)?;
        let mut generator: Box<dyn Generator> = if with_generator {
            build_generator(cfg)?
        } else {
            Box::new(ExtractiveGenerator)
        };
        let (mut encoder_cache, mut generator_cache, mut recorder) = (None, None, None);
        if let Some(dir) = &cfg.cache_dir {
            let e = Arc::new(CachingEncoder::new(encoder, dir));
            encoder = Box::new(Arc::clone(&e));
            encoder_cache = Some(e);
            let g = Arc::new(CachingGenerator::new(generator, dir));
            generator = Box::new(Arc::clone(&g));
            generator_cache = Some(g);
        }
        if record {
            let r = Arc::new(RecordingGenerator::new(generator));
            generator = Box::new(Arc::clone(&r));
            recorder = Some(r);
        }
        Ok(Self {
            encoder,
            generator,
            encoder_cache,
            generator_cache,
            recorder,
        })
    }

    /// `(encoder, generator)` calls that missed the cache.
    pub fn cache_misses(&self) -> Option<(usize, usize)> {
        Some((
            self.encoder_cache.as_ref()?.backend_calls.get(),
            self.generator_cache.as_ref()?.backend_calls.get(),
        ))
    }

    /// Writes recorded prompt/reply pairs, sorted by prompt hash.
    pub fn write_transcript(&self, path: &Path) -> Result<usize> {
        let Some(r) = &self.recorder else {
            return Ok(0);
        };
        let mut entries: Vec<TranscriptEntry> = r.entries();
        entries.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        entries.dedup();
        let mut text = String::new();
        for e in &entries {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        crate::output::write_file(path, text.as_bytes())?;
        Ok(entries.len())
    }
}
