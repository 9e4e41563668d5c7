//! OpenAI-compatible HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    check_embed_input, ChatRequest, EmbeddingCache, InFlightGate, Provider, ProviderConfig,
    ProviderError, Role,
};
use crate::domain::Embedding;

const MAX_BACKOFF: Duration = Duration::from_secs(8);

pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    cache: EmbeddingCache,
    gate: InFlightGate,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig, cache: EmbeddingCache) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlightGate::new(cfg.max_in_flight);
        Ok(HttpProvider {
            cfg,
            agent,
            cache,
            gate,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if !self.cfg.api_key.is_empty() {
            req = req.header("Authorization", format!("Bearer {}", self.cfg.api_key));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Parse(format!("invalid JSON body: {e}")))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = self.endpoint(path);
        let mut attempt = 0u32;
        loop {
            match self.post_once(&url, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let delay = self
                        .cfg
                        .backoff
                        .saturating_mul(1u32 << attempt.min(16))
                        .min(MAX_BACKOFF);
                    tracing::warn!(%url, attempt, error = %e, "retrying provider request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn chat_body(&self, req: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": req.system_instructions})];
        for m in &req.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": self.cfg.chat_model,
            "messages": messages,
            "temperature": req.temperature,
        });
        if req.response_schema.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

fn map_transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::StatusCode(status) => ProviderError::Http {
            status,
            body: String::new(),
        },
        ureq::Error::Json(e) => ProviderError::Parse(e.to_string()),
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Extracts the assistant content from a chat-completions response body.
pub(crate) fn parse_chat_response(body: &Value) -> Result<String, ProviderError> {
    body.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Parse("missing choices[0].message.content".into()))
}

/// Extracts embeddings from an embeddings response, ordered by `index`.
pub(crate) fn parse_embedding_response(
    body: &Value,
    expected: usize,
) -> Result<Vec<Embedding>, ProviderError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Parse("missing data array".into()))?;
    if data.len() != expected {
        return Err(ProviderError::Partial {
            expected,
            got: data.len(),
        });
    }
    let mut slots: Vec<Option<Embedding>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let values: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Parse(format!("item {pos} has no embedding")))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Parse("non-numeric component".into())))
            .collect::<Result<_, _>>()?;
        let slot = slots
            .get_mut(index)
            .ok_or_else(|| ProviderError::Parse(format!("index {index} out of range")))?;
        *slot = Some(Embedding::new(values)?);
    }
    let got = slots.iter().filter(|s| s.is_some()).count();
    if got != expected {
        return Err(ProviderError::Partial { expected, got });
    }
    let out: Vec<Embedding> = slots.into_iter().map(|s| s.expect("checked")).collect();
    if out.windows(2).any(|w| w[0].dim() != w[1].dim()) {
        return Err(ProviderError::Parse("embeddings of differing dimension".into()));
    }
    Ok(out)
}

impl Provider for HttpProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let body = self.post("chat/completions", &self.chat_body(req))?;
        parse_chat_response(&body)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        check_embed_input(texts)?;
        let model = &self.cfg.embedding_model;
        let mut out: Vec<Option<Embedding>> = texts.iter().map(|t| self.cache.get(model, t)).collect();
        let mut missing: Vec<String> = Vec::new();
        for (t, slot) in texts.iter().zip(&out) {
            if slot.is_none() && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
        if !missing.is_empty() {
            let body = self.post("embeddings", &json!({"model": model, "input": missing}))?;
            let fresh = parse_embedding_response(&body, missing.len())?;
            for (text, emb) in missing.iter().zip(fresh) {
                self.cache.put(model, text, emb)?;
            }
            for (t, slot) in texts.iter().zip(out.iter_mut()) {
                if slot.is_none() {
                    *slot = self.cache.get(model, t);
                }
            }
        }
        out.into_iter()
            .map(|e| e.ok_or(ProviderError::Partial { expected: texts.len(), got: 0 }))
            .collect()
    }

    fn health(&self) -> Result<(), ProviderError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.get(self.endpoint("models"));
        if !self.cfg.api_key.is_empty() {
            req = req.header("Authorization", format!("Bearer {}", self.cfg.api_key));
        }
        let resp = req.call().map_err(map_transport)?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            Ok(())
        } else {
            Err(ProviderError::Http {
                status,
                body: String::new(),
            })
        }
    }
}
