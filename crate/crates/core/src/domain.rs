//! Shared domain types: answerability categories, normalized embeddings,
//! templated queries, workflow traces and labeled examples.
//!
//! All types here are immutable once constructed and serialize to the
//! canonical snake_case JSON shapes used by the store journal and the
//! HTTP service.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Tolerance on the L2 norm of a stored embedding.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot build an embedding from an empty vector")]
    EmptyEmbedding,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("embedding is not unit norm (norm = {0})")]
    NotNormalized(f64),
    #[error("no-knowledge outcomes are excluded from the store")]
    ExcludedNoKnowledge,
    #[error("unknown answerability category `{0}`")]
    UnknownCategory(String),
    #[error("verdict explanation must not be empty")]
    EmptyExplanation,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

/// Outcome of executing a query against a RAG agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerabilityCategory {
    /// The agent has no workflow that can execute the query.
    NoWorkflow,
    /// A workflow ran but the underlying data is missing.
    NoKnowledge,
    /// The agent delivered a meaningful answer.
    Answerable,
}

impl AnswerabilityCategory {
    pub const ALL: [AnswerabilityCategory; 3] = [
        AnswerabilityCategory::NoWorkflow,
        AnswerabilityCategory::NoKnowledge,
        AnswerabilityCategory::Answerable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerabilityCategory::NoWorkflow => "no_workflow",
            AnswerabilityCategory::NoKnowledge => "no_knowledge",
            AnswerabilityCategory::Answerable => "answerable",
        }
    }
}

impl fmt::Display for AnswerabilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerabilityCategory {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "no_workflow" => Ok(AnswerabilityCategory::NoWorkflow),
            "no_knowledge" => Ok(AnswerabilityCategory::NoKnowledge),
            "answerable" => Ok(AnswerabilityCategory::Answerable),
            other => Err(DomainError::UnknownCategory(other.to_string())),
        }
    }
}

/// Binary label stored alongside a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryAnswerability {
    Answerable,
    NotAnswerable,
}

impl BinaryAnswerability {
    /// Label used in exports: the only category each binary label can stem from.
    pub fn category_label(self) -> &'static str {
        match self {
            BinaryAnswerability::Answerable => "answerable",
            BinaryAnswerability::NotAnswerable => "no_workflow",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryAnswerability::Answerable => BinaryAnswerability::NotAnswerable,
            BinaryAnswerability::NotAnswerable => BinaryAnswerability::Answerable,
        }
    }
}

impl TryFrom<AnswerabilityCategory> for BinaryAnswerability {
    type Error = DomainError;

    fn try_from(category: AnswerabilityCategory) -> Result<Self, Self::Error> {
        to_binary(category)
    }
}

/// Maps a three-way category onto the stored binary label.
///
/// `NoKnowledge` has no binary counterpart: such queries are never stored.
pub fn to_binary(category: AnswerabilityCategory) -> Result<BinaryAnswerability, DomainError> {
    match category {
        AnswerabilityCategory::Answerable => Ok(BinaryAnswerability::Answerable),
        AnswerabilityCategory::NoWorkflow => Ok(BinaryAnswerability::NotAnswerable),
        AnswerabilityCategory::NoKnowledge => Err(DomainError::ExcludedNoKnowledge),
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length. Zero and non-finite vectors are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(DomainError::ZeroVector);
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Accepts values that are already unit norm, without rescaling them.
    pub fn from_normalized(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DomainError::NotNormalized(norm));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64, DomainError> {
        cosine_similarity(self, other)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Embedding::from_normalized(values).map_err(serde::de::Error::custom)
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inner product of two unit vectors, summed in index order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two normalized embeddings, i.e. their inner product.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, DomainError> {
    if a.dim() != b.dim() {
        return Err(DomainError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

/// An extracted entity value and the mask it was replaced by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueBinding {
    pub entity_name: String,
    pub raw_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_value: Option<String>,
    /// Set when the entity matches no declared tool argument.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unknown: bool,
}

/// A mask occurrence `[entity_name]` inside a template text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask<'a> {
    pub name: &'a str,
    pub start: usize,
    pub end: usize,
}

fn mask_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([a-z0-9_]+)\]").expect("valid mask regex"))
}

/// Mask occurrences in `text`, in order of appearance.
pub fn parse_masks(text: &str) -> Vec<Mask<'_>> {
    mask_regex()
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).expect("match");
            Mask {
                name: c.get(1).expect("group").as_str(),
                start: whole.start(),
                end: whole.end(),
            }
        })
        .collect()
}

/// Returns true when every `[` ... `]` pair in `text` is a well-formed mask.
pub fn masks_well_formed(text: &str) -> bool {
    let stripped = mask_regex().replace_all(text, "");
    !stripped.contains('[') && !stripped.contains(']')
}

pub fn is_valid_entity_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// A query with its entity values replaced by named masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedQuery {
    pub template_text: String,
    pub bindings: Vec<ValueBinding>,
    pub source_query: String,
}

impl TemplatedQuery {
    /// Builds a templated query, checking that masks and bindings line up in order.
    pub fn new(
        template_text: impl Into<String>,
        bindings: Vec<ValueBinding>,
        source_query: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let tq = TemplatedQuery {
            template_text: template_text.into(),
            bindings,
            source_query: source_query.into(),
        };
        tq.validate()?;
        Ok(tq)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let masks = parse_masks(&self.template_text);
        if masks.len() != self.bindings.len() {
            return Err(DomainError::InvalidTemplate(format!(
                "{} masks but {} bindings",
                masks.len(),
                self.bindings.len()
            )));
        }
        for (mask, binding) in masks.iter().zip(&self.bindings) {
            if mask.name != binding.entity_name {
                return Err(DomainError::InvalidTemplate(format!(
                    "mask [{}] bound to `{}`",
                    mask.name, binding.entity_name
                )));
            }
        }
        Ok(())
    }

    /// Bindings keyed by entity name; the first occurrence wins.
    pub fn values(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for b in &self.bindings {
            map.entry(b.entity_name.clone())
                .or_insert_with(|| b.raw_value.clone());
        }
        map
    }

    pub fn binding(&self, entity: &str) -> Option<&ValueBinding> {
        self.bindings.iter().find(|b| b.entity_name == entity)
    }
}

/// One tool invocation inside a workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, String>,
    #[serde(default)]
    pub response_text: String,
    /// The call returned an empty or invalid result.
    #[serde(default)]
    pub response_empty: bool,
    /// Alternative values proposed by the tool, keyed by entity name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternatives: Option<BTreeMap<String, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkflowStep {
    ToolCall(ToolCallRecord),
    Reasoning { text: String },
}

/// Full record of one RAG execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowTrace {
    pub query: String,
    #[serde(default)]
    pub steps: Vec<WorkflowStep>,
    pub final_response: String,
    pub agent_id: String,
}

impl WorkflowTrace {
    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCallRecord> {
        self.steps.iter().filter_map(|s| match s {
            WorkflowStep::ToolCall(call) => Some(call),
            WorkflowStep::Reasoning { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerabilityVerdict {
    pub category: AnswerabilityCategory,
    pub explanation: String,
}

impl AnswerabilityVerdict {
    pub fn new(
        category: AnswerabilityCategory,
        explanation: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(DomainError::EmptyExplanation);
        }
        Ok(AnswerabilityVerdict {
            category,
            explanation,
        })
    }
}

/// The unit stored in and retrieved from the similarity store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub template: TemplatedQuery,
    /// Embedding of `template.template_text`.
    pub embedding: Embedding,
    pub answerability: BinaryAnswerability,
    pub explanation: String,
    pub created_at: DateTime<Utc>,
}

/// Fresh random example id.
pub fn new_example_id() -> String {
    uuid::Uuid::new_v4().to_string()
}
