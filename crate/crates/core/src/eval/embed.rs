use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mediacheck::Frame;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding service: {0}")]
    Service(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("expected {expected} embeddings, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension {got} differs from {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding configuration: {0}")]
    Config(String),
}

/// Joint text/image embedding space used by the clip component.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
    fn embed_images(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Deterministic offline embedder: hashes tokens into signed buckets.
/// Texts hash their lowercase words, frames a coarse colour layout.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn bag<'a>(&self, tokens: impl Iterator<Item = &'a str>) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            let h = Sha256::digest(t.as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.dim;
            v[idx] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        normalize(v)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| {
                let lower = t.to_lowercase();
                self.bag(lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()))
            })
            .collect())
    }

    fn embed_images(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(frames
            .iter()
            .map(|f| {
                let tokens = layout_tokens(f);
                self.bag(tokens.iter().map(String::as_str))
            })
            .collect())
    }
}

/// 4x4 grid of quantized mean colours.
fn layout_tokens(f: &Frame) -> Vec<String> {
    let mut out = Vec::with_capacity(16);
    for gy in 0..4u32 {
        for gx in 0..4u32 {
            let (x0, x1) = (gx * f.width / 4, ((gx + 1) * f.width / 4).max(gx * f.width / 4 + 1));
            let (y0, y1) = (gy * f.height / 4, ((gy + 1) * f.height / 4).max(gy * f.height / 4 + 1));
            let mut sum = [0u64; 3];
            let mut n = 0u64;
            for y in y0..y1.min(f.height) {
                for x in x0..x1.min(f.width) {
                    let p = f.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                    n += 1;
                }
            }
            let q = |c: usize| sum[c].checked_div(n).unwrap_or(0) / 64;
            out.push(format!("{gx}{gy}:{}{}{}", q(0), q(1), q(2)));
        }
    }
    out
}

/// Returns fixed vectors: one for every text, and one per frame cycling
/// through `image`. Meant for tests that need an exact cosine.
#[derive(Debug, Clone)]
pub struct FixedEmbedder {
    pub text: Vec<f64>,
    pub image: Vec<Vec<f64>>,
}

impl EmbeddingProvider for FixedEmbedder {
    fn dimension(&self) -> usize {
        self.text.len()
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|_| self.text.clone()).collect())
    }

    fn embed_images(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if self.image.is_empty() {
            return Err(EmbedError::Config("no image vectors".into()));
        }
        Ok((0..frames.len())
            .map(|i| self.image[i % self.image.len()].clone())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

/// Client for a JSON embedding service.
///
/// Texts are posted as `{"model", "texts": [...]}`, frames as
/// `{"model", "images": [{"width", "height", "rgb24_b64"}]}`; the reply is
/// `{"embeddings": [[...], ...]}` in input order.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        Self { config, agent }
    }

    fn post(&self, body: Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| EmbedError::Config(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EmbedError::Service(format!("HTTP {status}: {text}")));
        }
        parse_embeddings(&text, expected, self.config.dimension)
    }
}

pub(crate) fn parse_embeddings(text: &str, expected: usize, dim: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    #[derive(Deserialize)]
    struct Reply {
        embeddings: Vec<Vec<f64>>,
    }
    let reply: Reply = serde_json::from_str(text).map_err(|e| EmbedError::Malformed(e.to_string()))?;
    if reply.embeddings.len() != expected {
        return Err(EmbedError::CountMismatch {
            expected,
            got: reply.embeddings.len(),
        });
    }
    for v in &reply.embeddings {
        if v.len() != dim {
            return Err(EmbedError::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(reply.embeddings)
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.post(json!({"model": self.config.model, "texts": texts}), texts.len())
    }

    fn embed_images(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let images: Vec<Value> = frames
            .iter()
            .map(|f| json!({"width": f.width, "height": f.height, "rgb24_b64": b64.encode(&f.data)}))
            .collect();
        self.post(json!({"model": self.config.model, "images": images}), frames.len())
    }
}
