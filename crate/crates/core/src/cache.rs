//! On-disk caches for backend calls, keyed by content hash.
//!
//! Layout under the cache directory:
//!
//! ```text
//! embeddings/<sha256>.json   JSON array of f64, one file per text
//! generations/<sha256>.txt   raw reply text
//! ```
//!
//! Keys hash the backend fingerprint together with the input, so changing the
//! encoder seed or model never serves a stale entry.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::summarizer::{GenerationRequest, Generator};
use crate::vectorspace::{BackendError, EmbeddingVector, Encoder};

/// SHA-256, hex encoded. A single part hashes its raw bytes; several parts
/// are length-prefixed so boundaries cannot collide.
pub fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    if let [single] = parts {
        h.update(single.as_bytes());
    } else {
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file so concurrent readers never see a torn entry.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let dir = path.parent().expect("cache entries live in a directory");
    fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| cache_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| cache_err(path, e))?;
    tmp.persist(path).map_err(|e| cache_err(path, e))?;
    Ok(())
}

/// Counts calls that reach the wrapped backend.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicUsize);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn add(&self, n: usize) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }
}

pub struct CachingEncoder<E> {
    inner: E,
    dir: PathBuf,
    pub backend_calls: CallCounter,
}

impl<E: Encoder> CachingEncoder<E> {
    pub fn new(inner: E, cache_dir: impl AsRef<Path>) -> Self {
        Self {
            inner,
            dir: cache_dir.as_ref().join("embeddings"),
            backend_calls: CallCounter::default(),
        }
    }

    fn entry(&self, text: &str) -> PathBuf {
        let key = content_hash(&[&self.inner.fingerprint(), text]);
        self.dir.join(format!("{key}.json"))
    }
}

impl<E: Encoder> Encoder for CachingEncoder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let mut out: Vec<Option<EmbeddingVector>> = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let path = self.entry(t);
            match fs::read_to_string(&path) {
                Ok(s) => {
                    let v: EmbeddingVector =
                        serde_json::from_str(&s).map_err(|e| cache_err(&path, e))?;
                    out.push(Some(v));
                }
                Err(_) => {
                    out.push(None);
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            self.backend_calls.add(1);
            let fresh = self.inner.embed_batch(&batch)?;
            if fresh.len() != batch.len() {
                return Err(BackendError::CountMismatch {
                    expected: batch.len(),
                    actual: fresh.len(),
                });
            }
            for (&i, v) in missing.iter().zip(fresh) {
                let path = self.entry(texts[i]);
                let json = serde_json::to_vec(&v).map_err(|e| cache_err(&path, e))?;
                write_atomic(&path, &json)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

pub struct CachingGenerator<G> {
    inner: G,
    dir: PathBuf,
    pub backend_calls: CallCounter,
}

impl<G: Generator> CachingGenerator<G> {
    pub fn new(inner: G, cache_dir: impl AsRef<Path>) -> Self {
        Self {
            inner,
            dir: cache_dir.as_ref().join("generations"),
            backend_calls: CallCounter::default(),
        }
    }
}

impl<G: Generator> Generator for CachingGenerator<G> {
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let key = content_hash(&[&self.inner.fingerprint(), &request.prompt]);
        let path = self.dir.join(format!("{key}.txt"));
        if let Ok(s) = fs::read_to_string(&path) {
            return Ok(s);
        }
        self.backend_calls.add(1);
        let reply = self.inner.complete(request)?;
        write_atomic(&path, reply.as_bytes())?;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorspace::MockEncoder;

    #[test]
    fn warm_cache_skips_backend_and_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let texts = ["battery lasts long", "too heavy", "battery lasts long"];
        let cold = CachingEncoder::new(MockEncoder::new(3, 16), dir.path());
        let a = cold.embed_batch(&texts).unwrap();
        assert_eq!(cold.backend_calls.get(), 1);
        let warm = CachingEncoder::new(MockEncoder::new(3, 16), dir.path());
        let b = warm.embed_batch(&texts).unwrap();
        assert_eq!(warm.backend_calls.get(), 0);
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.values().iter().zip(y.values()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn fingerprint_separates_entries() {
        let dir = tempfile::tempdir().unwrap();
        let a = CachingEncoder::new(MockEncoder::new(1, 8), dir.path());
        a.embed_batch(&["x"]).unwrap();
        let b = CachingEncoder::new(MockEncoder::new(2, 8), dir.path());
        b.embed_batch(&["x"]).unwrap();
        assert_eq!(b.backend_calls.get(), 1);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            content_hash(&["abc"]),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
