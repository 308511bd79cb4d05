//! HTTP backends for the encoder, generator and external similarity scorer.
//!
//! Wire formats:
//!
//! * encoder: `POST {"texts": [..]}` -> `{"embeddings": [[..], ..]}`
//! * generator: chat-completion style, `POST {"model", "messages": [{"role": "user",
//!   "content": prompt}], "temperature": 0}` -> `{"choices": [{"message": {"content": ..}}]}`
//! * scorer: `POST {"pairs": [[a, b], ..]}` -> `{"scores": [..]}`
//!
//! Bearer tokens are read from an environment variable named in the config.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::evalkit::SimilarityScorer;
use crate::summarizer::{GenerationRequest, Generator};
use crate::vectorspace::{BackendError, EmbeddingVector, Encoder};

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads the bearer token from `var` if it is set.
    pub fn with_token_env(mut self, var: &str) -> Self {
        self.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        body: &B,
    ) -> Result<R, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Unreachable(format!("{}: {e}", self.url)))?;
        resp.body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(format!("{}: {e}", self.url)))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HttpEncoder {
    pub endpoint: Endpoint,
    pub dim: usize,
}

impl Encoder for HttpEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("http:{}:dim={}", self.endpoint.url, self.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let resp: EmbedResponse = self.endpoint.post(&EmbedRequest { texts })?;
        resp.embeddings
            .into_iter()
            .map(|v| EmbeddingVector::new(v).map_err(BackendError::from))
            .collect()
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    pub endpoint: Endpoint,
    pub model: String,
}

impl Generator for HttpGenerator {
    fn fingerprint(&self) -> String {
        format!("http:{}:model={}", self.endpoint.url, self.model)
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: 0.0,
        };
        let resp: ChatResponse = self.endpoint.post(&body)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no choices in completion".into()))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Model-based similarity served over HTTP (BERTScore/BLEURT-class scorers).
#[derive(Debug, Clone)]
pub struct HttpScorer {
    pub endpoint: Endpoint,
    pub batch_size: usize,
}

impl SimilarityScorer for HttpScorer {
    fn name(&self) -> String {
        format!("external:{}", self.endpoint.url)
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, BackendError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.batch_size.max(1)) {
            let body = ScoreRequest {
                pairs: chunk.iter().map(|(a, b)| [*a, *b]).collect(),
            };
            let resp: ScoreResponse = self.endpoint.post(&body)?;
            if resp.scores.len() != chunk.len() {
                return Err(BackendError::CountMismatch {
                    expected: chunk.len(),
                    actual: resp.scores.len(),
                });
            }
            if let Some(s) = resp.scores.iter().find(|s| !s.is_finite()) {
                return Err(BackendError::Malformed(format!("non-finite score {s}")));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}
