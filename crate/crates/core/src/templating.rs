//! Query templating: entity values are replaced by `[entity_name]` masks.
//!
//! The provider only returns the list of `(entity, value)` pairs found in a
//! query. The template text is built locally by replacing each value's span,
//! so a hallucinated value (one that does not occur verbatim) is caught as a
//! validation error instead of corrupting the template.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{is_valid_entity_name, parse_masks, TemplatedQuery, ValueBinding};
use crate::prompts::{render, PromptSet};
use crate::providers::{schema, strip_code_fence, ChatMessage, ChatRequest, Provider, ProviderError};

#[derive(Debug, Error)]
pub enum TemplatingError {
    #[error("query must not be empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unparseable entity list: {0}")]
    Malformed(String),
    #[error("extracted value `{value}` for `{entity}` does not occur in the query")]
    ValueNotInQuery { entity: String, value: String },
    #[error("invalid entity name `{0}`")]
    InvalidEntityName(String),
    #[error("no value for masks: {}", .0.join(", "))]
    MissingValues(Vec<String>),
    #[error("invalid agent profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    DateRange,
    Date,
    Number,
    Identifier,
    FreeText,
    Categorical,
}

/// Describes one tool argument: its entity name, type and a few example values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolArgumentSchema {
    pub tool_name: String,
    pub entity_name: String,
    pub value_type: ValueType,
    pub example_values: Vec<String>,
    /// The tool proposes alternative values when a lookup fails.
    #[serde(default)]
    pub alternative_value_hint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    #[serde(default)]
    pub purpose: String,
    #[serde(default)]
    pub tool_schemas: Vec<ToolArgumentSchema>,
    #[serde(default)]
    pub static_instructions: String,
    /// Year assumed for dates given without one; defaults to the current year.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_year: Option<i32>,
}

impl AgentProfile {
    pub fn validate(&self) -> Result<(), TemplatingError> {
        if self.agent_id.trim().is_empty() {
            return Err(TemplatingError::Profile("agent_id must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.tool_schemas {
            if !is_valid_entity_name(&s.entity_name) {
                return Err(TemplatingError::InvalidEntityName(s.entity_name.clone()));
            }
            if s.example_values.is_empty() {
                return Err(TemplatingError::Profile(format!(
                    "{}.{} has no example values",
                    s.tool_name, s.entity_name
                )));
            }
            if !seen.insert((s.tool_name.as_str(), s.entity_name.as_str())) {
                return Err(TemplatingError::Profile(format!(
                    "duplicate argument {}.{}",
                    s.tool_name, s.entity_name
                )));
            }
        }
        Ok(())
    }

    /// Loads a profile from a `.json` or `.toml` document.
    pub fn load(path: &Path) -> Result<Self, TemplatingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplatingError::Profile(format!("{}: {e}", path.display())))?;
        let profile: AgentProfile = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| TemplatingError::Profile(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| TemplatingError::Profile(e.to_string()))?
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn schema_for(&self, entity: &str) -> Option<&ToolArgumentSchema> {
        self.tool_schemas.iter().find(|s| s.entity_name == entity)
    }

    pub fn knows(&self, entity: &str) -> bool {
        self.schema_for(entity).is_some()
    }

    pub fn year(&self) -> i32 {
        self.reference_year.unwrap_or_else(|| Utc::now().year())
    }

    fn render_schemas(&self) -> String {
        if self.tool_schemas.is_empty() {
            return "(no tool arguments)".into();
        }
        self.tool_schemas
            .iter()
            .map(|s| {
                format!(
                    "- {} (tool {}, type {}), e.g. {}",
                    s.entity_name,
                    s.tool_name,
                    serde_json::to_value(s.value_type)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    s.example_values.join(", ")
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Masks entity values in `query` using the provider's entity list.
///
/// Validation failures are retried once with a corrective instruction.
pub fn template_query(
    query: &str,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
) -> Result<TemplatedQuery, TemplatingError> {
    if query.trim().is_empty() {
        return Err(TemplatingError::EmptyQuery);
    }
    let system = render(
        &prompts.templating,
        &[
            ("schemas", &profile.render_schemas()),
            ("examples", prompts.templating_examples.trim_end()),
        ],
    );
    let mut req = ChatRequest::new(system, format!("<query>{query}</query>"))
        .with_schema(schema::TEMPLATING);
    let first = provider.chat(&req)?;
    let err = match parse_entities(&first).and_then(|e| mask_spans(query, &e, profile)) {
        Ok(tq) => return Ok(tq),
        Err(e) => e,
    };
    req.messages.push(ChatMessage::assistant(first));
    req.messages.push(ChatMessage::user(format!(
        "Your answer was rejected: {err}. Only list values copied character for character from the query, using lowercase entity names. <query>{query}</query>"
    )));
    let second = provider.chat(&req)?;
    parse_entities(&second).and_then(|e| mask_spans(query, &e, profile))
}

/// Parses `{"entities": [{"name", "value"}]}`. Values that are themselves masks are dropped.
pub fn parse_entities(text: &str) -> Result<Vec<(String, String)>, TemplatingError> {
    let v: Value = serde_json::from_str(strip_code_fence(text))
        .map_err(|e| TemplatingError::Malformed(e.to_string()))?;
    let items = v
        .get("entities")
        .and_then(Value::as_array)
        .ok_or_else(|| TemplatingError::Malformed("missing `entities` array".into()))?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let name = item
            .get("name")
            .or_else(|| item.get("entity"))
            .and_then(Value::as_str)
            .ok_or_else(|| TemplatingError::Malformed("entity without name".into()))?;
        let value = item
            .get("value")
            .and_then(Value::as_str)
            .ok_or_else(|| TemplatingError::Malformed(format!("entity `{name}` without value")))?;
        let is_mask = parse_masks(value)
            .first()
            .is_some_and(|m| m.start == 0 && m.end == value.len());
        if !is_mask {
            out.push((name.to_string(), value.to_string()));
        }
    }
    Ok(out)
}

/// Builds the template by replacing each value's first free span with its mask.
pub fn mask_spans(
    query: &str,
    entities: &[(String, String)],
    profile: &AgentProfile,
) -> Result<TemplatedQuery, TemplatingError> {
    let mut taken: Vec<(usize, usize)> = parse_masks(query).iter().map(|m| (m.start, m.end)).collect();
    let mut spans: Vec<(usize, usize, &str, &str)> = Vec::with_capacity(entities.len());
    for (name, value) in entities {
        if !is_valid_entity_name(name) {
            return Err(TemplatingError::InvalidEntityName(name.clone()));
        }
        let not_found = || TemplatingError::ValueNotInQuery {
            entity: name.clone(),
            value: value.clone(),
        };
        if value.is_empty() {
            return Err(not_found());
        }
        let (start, end) = query
            .match_indices(value.as_str())
            .map(|(i, v)| (i, i + v.len()))
            .find(|&(s, e)| taken.iter().all(|&(ts, te)| e <= ts || s >= te))
            .ok_or_else(not_found)?;
        taken.push((start, end));
        spans.push((start, end, name, value));
    }
    spans.sort_by_key(|s| s.0);
    let year = profile.year();
    let mut template = String::with_capacity(query.len());
    let mut bindings = Vec::with_capacity(spans.len());
    let mut cursor = 0;
    for (start, end, name, value) in spans {
        template.push_str(&query[cursor..start]);
        template.push('[');
        template.push_str(name);
        template.push(']');
        cursor = end;
        let schema = profile.schema_for(name);
        bindings.push(ValueBinding {
            entity_name: name.to_string(),
            raw_value: value.to_string(),
            normalized_value: schema.and_then(|s| normalize_value(s.value_type, value, year)),
            unknown: schema.is_none(),
        });
    }
    template.push_str(&query[cursor..]);
    Ok(TemplatedQuery {
        template_text: template,
        bindings,
        source_query: query.to_string(),
    })
}

/// Replaces every mask with its value from `values`.
pub fn instantiate(
    template_text: &str,
    values: &BTreeMap<String, String>,
) -> Result<String, TemplatingError> {
    let masks = parse_masks(template_text);
    let missing: BTreeSet<String> = masks
        .iter()
        .filter(|m| !values.contains_key(m.name))
        .map(|m| m.name.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(TemplatingError::MissingValues(missing.into_iter().collect()));
    }
    let mut out = String::with_capacity(template_text.len());
    let mut cursor = 0;
    for m in masks {
        out.push_str(&template_text[cursor..m.start]);
        out.push_str(&values[m.name]);
        cursor = m.end;
    }
    out.push_str(&template_text[cursor..]);
    Ok(out)
}

/// Order-preserving inverse of masking: the i-th mask takes the i-th binding.
pub fn instantiate_bindings(tq: &TemplatedQuery) -> Result<String, TemplatingError> {
    let masks = parse_masks(&tq.template_text);
    if masks.len() != tq.bindings.len() {
        return Err(TemplatingError::MissingValues(
            masks.iter().skip(tq.bindings.len()).map(|m| m.name.to_string()).collect(),
        ));
    }
    let mut out = String::new();
    let mut cursor = 0;
    for (m, b) in masks.iter().zip(&tq.bindings) {
        out.push_str(&tq.template_text[cursor..m.start]);
        out.push_str(&b.raw_value);
        cursor = m.end;
    }
    out.push_str(&tq.template_text[cursor..]);
    Ok(out)
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn month_index(s: &str) -> Option<u32> {
    let s = s.to_lowercase();
    MONTHS
        .iter()
        .position(|m| *m == s || (s.len() >= 3 && m.starts_with(&s) && s.len() <= m.len()))
        .map(|i| i as u32 + 1)
}

fn month_range(year: i32, month: u32) -> Option<String> {
    let first = NaiveDate::from_ymd_opt(year, month, 1)?;
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)?
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)?
    };
    let last = next.pred_opt()?;
    Some(format!("{first} to {last}"))
}

fn span(first: NaiveDate, last: NaiveDate) -> String {
    format!("{first} to {last}")
}

/// Canonical form of a value, where one exists for its type.
///
/// Dates become ISO ranges `YYYY-MM-DD to YYYY-MM-DD`; a month without a
/// year falls in `reference_year`.
pub fn normalize_value(value_type: ValueType, raw: &str, reference_year: i32) -> Option<String> {
    let raw = raw.trim();
    match value_type {
        ValueType::DateRange | ValueType::Date => normalize_date(raw, reference_year),
        ValueType::Number => raw.replace(',', "").parse::<f64>().ok().map(|n| n.to_string()),
        _ => None,
    }
}

fn normalize_date(raw: &str, reference_year: i32) -> Option<String> {
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Some(span(d, d));
    }
    if let Some((a, b)) = raw.split_once(" to ") {
        let a = NaiveDate::parse_from_str(a.trim(), "%Y-%m-%d").ok()?;
        let b = NaiveDate::parse_from_str(b.trim(), "%Y-%m-%d").ok()?;
        return Some(span(a, b));
    }
    let parts: Vec<&str> = raw.split_whitespace().collect();
    match parts.as_slice() {
        [word] => {
            if let Some(m) = month_index(word) {
                return month_range(reference_year, m);
            }
            if let Some((m, y)) = word.split_once('/') {
                let (m, y) = (m.parse::<u32>().ok()?, y.parse::<i32>().ok()?);
                return month_range(y, m);
            }
            let y: i32 = word.parse().ok()?;
            if (1000..=9999).contains(&y) {
                return Some(span(
                    NaiveDate::from_ymd_opt(y, 1, 1)?,
                    NaiveDate::from_ymd_opt(y, 12, 31)?,
                ));
            }
            None
        }
        [first, year] => {
            let y: i32 = year.parse().ok()?;
            if let Some(m) = month_index(first) {
                return month_range(y, m);
            }
            let q = first.strip_prefix('Q').or_else(|| first.strip_prefix('q'))?;
            let q: u32 = q.parse().ok()?;
            if !(1..=4).contains(&q) {
                return None;
            }
            let start = NaiveDate::from_ymd_opt(y, 3 * q - 2, 1)?;
            let end = month_range(y, 3 * q)?;
            let end = end.split(" to ").nth(1)?.to_string();
            Some(format!("{start} to {end}"))
        }
        _ => None,
    }
}
