//! Deterministic simulator backend.
//!
//! Embeddings: text is lowercased and split into words (runs of ASCII
//! alphanumerics and `_`). Each word seeds a ChaCha8 stream from
//! `SHA-256(seed_le_bytes || word)`; the stream's low bits give a `±1`
//! vector of the store dimension. Word vectors are summed (repeated words
//! count repeatedly) and the sum is normalized. Texts without any word use
//! the trimmed lowercase text as their single token.
//!
//! Chat is delegated to a [`Responder`]: a JSON [`Rulebook`] for scripted
//! tests, or a scenario-backed model from the simulation module.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_embed_input, ChatRequest, Provider, ProviderError};
use crate::domain::Embedding;

const WORD_CACHE_LIMIT: usize = 200_000;

/// Hash-projection embedder.
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
    words: RwLock<HashMap<String, Arc<Vec<f64>>>>,
}

impl HashEmbedder {
    pub const DEFAULT_SEED: u64 = 0x5eed_0fc0_ffee;

    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder {
            dimension,
            seed,
            words: RwLock::new(HashMap::new()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Lowercase word tokens, as used by the projection.
    pub fn tokenize(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let tokens: Vec<String> = lower
            .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if tokens.is_empty() {
            vec![lower.trim().to_string()]
        } else {
            tokens
        }
    }

    fn word_vector(&self, word: &str) -> Arc<Vec<f64>> {
        if let Some(v) = self.words.read().expect("word cache").get(word) {
            return v.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(word.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dimension)
            .map(|_| if rng.next_u32() & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let v = Arc::new(v);
        let mut words = self.words.write().expect("word cache");
        if words.len() < WORD_CACHE_LIMIT {
            words.insert(word.to_string(), v.clone());
        }
        v
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let mut acc = vec![0.0f64; self.dimension];
        for token in Self::tokenize(text) {
            let v = self.word_vector(&token);
            for (a, x) in acc.iter_mut().zip(v.iter()) {
                *a += x;
            }
        }
        Ok(Embedding::new(acc)?)
    }
}

/// Scripted chat behavior for the simulator.
pub trait Responder: Send + Sync {
    fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

impl<R: Responder + ?Sized> Responder for Arc<R> {
    fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).respond(req)
    }
}

/// Simulated provider: hash embeddings plus a responder.
pub struct SimProvider<R> {
    embedder: HashEmbedder,
    responder: R,
}

impl<R: Responder> SimProvider<R> {
    pub fn new(dimension: usize, responder: R) -> Self {
        SimProvider {
            embedder: HashEmbedder::new(dimension, HashEmbedder::DEFAULT_SEED),
            responder,
        }
    }

    pub fn with_embedder(embedder: HashEmbedder, responder: R) -> Self {
        SimProvider {
            embedder,
            responder,
        }
    }

    pub fn embedder(&self) -> &HashEmbedder {
        &self.embedder
    }

    pub fn responder(&self) -> &R {
        &self.responder
    }
}

impl<R: Responder> Provider for SimProvider<R> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        self.responder.respond(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        check_embed_input(texts)?;
        texts.iter().map(|t| self.embedder.embed_text(t)).collect()
    }
}

/// Conditions a rule checks against a request. All present conditions must hold.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RuleMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rule {
    pub when: RuleMatch,
    /// Response text; with a regex matcher, `$1`/`${name}` expand to captures.
    pub respond: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RulebookFile {
    rules: Vec<Rule>,
    #[serde(default)]
    fallback: Option<String>,
}

/// First-match rulebook loaded from a JSON fixture.
#[derive(Debug, Clone)]
pub struct Rulebook {
    rules: Vec<(Rule, Option<Regex>)>,
    fallback: Option<String>,
}

impl Rulebook {
    pub fn new(rules: Vec<Rule>, fallback: Option<String>) -> Result<Self, ProviderError> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let re = match &r.when.regex {
                    Some(pat) => Some(Regex::new(pat).map_err(|e| {
                        ProviderError::InvalidRequest(format!("bad rule regex `{pat}`: {e}"))
                    })?),
                    None => None,
                };
                Ok((r, re))
            })
            .collect::<Result<_, ProviderError>>()?;
        Ok(Rulebook { rules, fallback })
    }

    pub fn from_json(json: &str) -> Result<Self, ProviderError> {
        let file: RulebookFile = serde_json::from_str(json)
            .map_err(|e| ProviderError::InvalidRequest(format!("rulebook: {e}")))?;
        Rulebook::new(file.rules, file.fallback)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Rulebook::from_json(&text)
    }
}

impl Responder for Rulebook {
    fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let text = req.full_text();
        for (rule, re) in &self.rules {
            if let Some(schema) = &rule.when.schema {
                if req.response_schema.as_deref() != Some(schema.as_str()) {
                    continue;
                }
            }
            if !rule.when.contains.iter().all(|needle| text.contains(needle.as_str())) {
                continue;
            }
            match re {
                Some(re) => {
                    if let Some(caps) = re.captures(&text) {
                        let mut out = String::new();
                        caps.expand(&rule.respond, &mut out);
                        return Ok(out);
                    }
                }
                None => return Ok(rule.respond.clone()),
            }
        }
        self.fallback.clone().ok_or(ProviderError::NoRule)
    }
}
