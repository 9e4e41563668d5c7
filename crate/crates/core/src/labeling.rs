//! Self-labeling of executed queries and ingestion into the store.

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    to_binary, AnswerabilityCategory, AnswerabilityVerdict, BinaryAnswerability, DomainError,
    Embedding, LabeledExample, TemplatedQuery, WorkflowStep, WorkflowTrace,
};
use crate::prompts::{render, PromptSet};
use crate::providers::{
    embed_one, schema, strip_code_fence, ChatMessage, ChatRequest, Provider, ProviderError,
};
use crate::store::{SimilarityStore, StoreError};
use crate::templating::{template_query, AgentProfile, TemplatingError};

/// Explanation attached to labels flipped to negative by [`LabelNoise`].
pub const NOISE_NEGATIVE_EXPLANATION: &str = "Response did not provide specific information.";
pub const NOISE_POSITIVE_EXPLANATION: &str = "The response answers the query.";

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("trace has no final response")]
    MissingResponse,
    #[error("unparseable verdict: {0}")]
    Malformed(String),
    #[error("unknown answerability category `{0}`")]
    UnknownCategory(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Templating(#[from] TemplatingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Plain-text rendering of a trace, as shown to the provider.
pub fn render_trace(trace: &WorkflowTrace) -> String {
    let mut out = format!("<query>{}</query>\n<steps>\n", trace.query);
    for (n, step) in trace.steps.iter().enumerate() {
        match step {
            WorkflowStep::ToolCall(call) => {
                let args: Vec<String> = call.arguments.iter().map(|(k, v)| format!("{k}={v}")).collect();
                out.push_str(&format!("{}. tool {}({})", n + 1, call.tool_name, args.join(", ")));
                if call.response_empty {
                    out.push_str(" -> [empty]");
                }
                out.push_str(&format!(" -> {}\n", call.response_text));
                if let Some(alts) = &call.alternatives {
                    for (entity, values) in alts {
                        out.push_str(&format!("   alternatives for {entity}: {}\n", values.join(" | ")));
                    }
                }
            }
            WorkflowStep::Reasoning { text } => out.push_str(&format!("{}. reasoning: {text}\n", n + 1)),
        }
    }
    out.push_str(&format!("</steps>\n<response>{}</response>", trace.final_response));
    out
}

/// Parses `{"category": ..., "explanation": ...}`.
pub fn parse_verdict(text: &str) -> Result<AnswerabilityVerdict, LabelingError> {
    let v: Value = serde_json::from_str(strip_code_fence(text))
        .map_err(|e| LabelingError::Malformed(e.to_string()))?;
    let cat = v
        .get("category")
        .and_then(Value::as_str)
        .ok_or_else(|| LabelingError::Malformed("missing `category`".into()))?;
    let category: AnswerabilityCategory = cat
        .trim()
        .parse()
        .map_err(|_| LabelingError::UnknownCategory(cat.to_string()))?;
    let explanation = v.get("explanation").and_then(Value::as_str).unwrap_or_default();
    Ok(AnswerabilityVerdict::new(category, explanation)?)
}

/// Classifies a trace into one of the three categories, with an explanation.
pub fn evaluate_answerability(
    trace: &WorkflowTrace,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
) -> Result<AnswerabilityVerdict, LabelingError> {
    if trace.final_response.trim().is_empty() {
        return Err(LabelingError::MissingResponse);
    }
    let mut system = render(
        &prompts.answerability,
        &[("examples", prompts.answerability_examples.trim_end())],
    );
    if !profile.purpose.is_empty() {
        system = format!("{system}\n\nAgent purpose: {}", profile.purpose);
    }
    let mut req = ChatRequest::new(system, render_trace(trace)).with_schema(schema::VERDICT);
    let first = provider.chat(&req)?;
    let err = match parse_verdict(&first) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    req.messages.push(ChatMessage::assistant(first));
    req.messages.push(ChatMessage::user(format!(
        "Your answer was rejected: {err}. Answer with a JSON object whose category is one of no_workflow, no_knowledge, answerable and whose explanation is not empty."
    )));
    parse_verdict(&provider.chat(&req)?)
}

/// Template and embedding of a query, computed once and shared by ingestion and suggestion.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub template: TemplatedQuery,
    pub embedding: Embedding,
}

pub fn prepare(
    query: &str,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
) -> Result<PreparedQuery, LabelingError> {
    let template = template_query(query, profile, provider, prompts)?;
    let embedding = embed_one(provider, &template.template_text)?;
    Ok(PreparedQuery { template, embedding })
}

/// The example that would be stored for this verdict, or `None` for no-knowledge.
pub fn to_example(verdict: &AnswerabilityVerdict, prepared: &PreparedQuery) -> Option<LabeledExample> {
    let answerability = to_binary(verdict.category).ok()?;
    Some(LabeledExample {
        id: crate::domain::new_example_id(),
        template: prepared.template.clone(),
        embedding: prepared.embedding.clone(),
        answerability,
        explanation: verdict.explanation.clone(),
        created_at: chrono::Utc::now(),
    })
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub verdict: AnswerabilityVerdict,
    pub prepared: PreparedQuery,
    pub id: Option<String>,
}

/// Labels, templates and embeds a trace; stores it unless it is no-knowledge.
///
/// All provider work happens before the store is touched, so a failure
/// leaves the store unchanged.
pub fn ingest_trace(
    trace: &WorkflowTrace,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
    store: &mut SimilarityStore,
) -> Result<IngestOutcome, LabelingError> {
    let verdict = evaluate_answerability(trace, profile, provider, prompts)?;
    let prepared = prepare(&trace.query, profile, provider, prompts)?;
    let id = match to_example(&verdict, &prepared) {
        Some(ex) => Some(store.insert(ex)?),
        None => None,
    };
    Ok(IngestOutcome {
        verdict,
        prepared,
        id,
    })
}

/// Deterministic label flips for robustness experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelNoise {
    pub rate: f64,
    pub seed: u64,
}

impl LabelNoise {
    pub fn none() -> Self {
        LabelNoise { rate: 0.0, seed: 0 }
    }

    /// Whether the label identified by `key` is flipped.
    pub fn flips(&self, key: &str) -> bool {
        self.rate > 0.0 && unit_hash(self.seed, key) < self.rate
    }

    /// Applies the flip to a verdict. No-knowledge verdicts are left alone.
    pub fn apply(&self, verdict: AnswerabilityVerdict, key: &str) -> AnswerabilityVerdict {
        let Ok(label) = to_binary(verdict.category) else {
            return verdict;
        };
        if !self.flips(key) {
            return verdict;
        }
        match label.flipped() {
            BinaryAnswerability::NotAnswerable => AnswerabilityVerdict {
                category: AnswerabilityCategory::NoWorkflow,
                explanation: NOISE_NEGATIVE_EXPLANATION.into(),
            },
            BinaryAnswerability::Answerable => AnswerabilityVerdict {
                category: AnswerabilityCategory::Answerable,
                explanation: NOISE_POSITIVE_EXPLANATION.into(),
            },
        }
    }
}

/// Uniform value in `[0, 1)` derived from `SHA-256(seed_le || key)`.
pub fn unit_hash(seed: u64, key: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}
