//! Suggestion generation: few-shot prompt, template generation and value imputation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{
    masks_well_formed, parse_masks, AnswerabilityCategory, AnswerabilityVerdict, LabeledExample,
    TemplatedQuery, WorkflowTrace,
};
use crate::labeling::render_trace;
use crate::prompts::{render, PromptSet};
use crate::providers::{schema, strip_code_fence, ChatMessage, ChatRequest, Provider, ProviderError};
use crate::retrieval::ExampleSets;
use crate::templating::{instantiate, AgentProfile};

pub const MAX_EXPLANATION_CHARS: usize = 500;
pub const NO_EXAMPLES: &str = "(no examples available)";

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid suggestion request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unparseable generation output: {0}")]
    Malformed(String),
    #[error("no valid suggestion could be generated: {0}")]
    Exhausted(String),
    #[error("no value available for entity `{0}`")]
    NoValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Template generation then a separate attribution call.
    #[default]
    FewShot,
    /// Reuse the most similar positive template unchanged.
    RetrievalOnly,
    /// Templates and values in a single call.
    Combined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuggestionRequest {
    pub original_query: String,
    pub template: TemplatedQuery,
    pub trace: WorkflowTrace,
    pub verdict: AnswerabilityVerdict,
    pub examples: ExampleSets,
    pub num_suggestions: usize,
}

impl SuggestionRequest {
    pub const DEFAULT_NUM_SUGGESTIONS: usize = 3;

    /// Request for a failed query. Answerable verdicts are rejected.
    pub fn new(
        template: TemplatedQuery,
        trace: WorkflowTrace,
        verdict: AnswerabilityVerdict,
        examples: ExampleSets,
        num_suggestions: usize,
    ) -> Result<Self, GenerationError> {
        if verdict.category == AnswerabilityCategory::Answerable {
            return Err(GenerationError::InvalidRequest(
                "suggestions are only generated for unanswered queries".into(),
            ));
        }
        Self::for_evaluation(template, trace, verdict, examples, num_suggestions)
    }

    /// Like [`SuggestionRequest::new`] but accepts any verdict. The evaluation
    /// harness suggests for every held-out query regardless of its outcome.
    pub fn for_evaluation(
        template: TemplatedQuery,
        trace: WorkflowTrace,
        verdict: AnswerabilityVerdict,
        examples: ExampleSets,
        num_suggestions: usize,
    ) -> Result<Self, GenerationError> {
        if num_suggestions == 0 {
            return Err(GenerationError::InvalidRequest("num_suggestions must be >= 1".into()));
        }
        Ok(SuggestionRequest {
            original_query: trace.query.clone(),
            template,
            trace,
            verdict,
            examples,
            num_suggestions,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    ToolAlternative,
    ToolExample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputedValue {
    pub value: String,
    pub provenance: Provenance,
}

/// How one mask got its value: the steps rejected before the chosen one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationDecision {
    pub entity: String,
    pub rejected: Vec<Provenance>,
    pub chosen: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub suggested_query: String,
    pub source_template: String,
    pub imputed_values: BTreeMap<String, ImputedValue>,
    pub decisions: Vec<ImputationDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionResult {
    pub suggestions: Vec<Suggestion>,
    pub prompt_transcript: String,
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn render_examples(examples: &[LabeledExample]) -> String {
    if examples.is_empty() {
        return NO_EXAMPLES.to_string();
    }
    examples
        .iter()
        .map(|e| {
            format!(
                "- Template: {}\n  Explanation: {}",
                e.template.template_text,
                truncate_chars(e.explanation.trim(), MAX_EXPLANATION_CHARS).replace('\n', " ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_bindings(t: &TemplatedQuery) -> String {
    if t.bindings.is_empty() {
        return "(none)".into();
    }
    t.bindings
        .iter()
        .map(|b| match &b.normalized_value {
            Some(n) => format!("- {} = {} ({n})", b.entity_name, b.raw_value),
            None => format!("- {} = {}", b.entity_name, b.raw_value),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn agent_line(profile: &AgentProfile) -> String {
    if !profile.static_instructions.trim().is_empty() {
        profile.static_instructions.trim().to_string()
    } else if !profile.purpose.trim().is_empty() {
        format!("The agent handles {}.", profile.purpose.trim())
    } else {
        String::new()
    }
}

fn render_suggest(body: &str, req: &SuggestionRequest, profile: &AgentProfile) -> String {
    render(
        body,
        &[
            ("template", &req.template.template_text),
            ("agent", &agent_line(profile)),
            ("positive", &render_examples(&req.examples.positive)),
            ("negative", &render_examples(&req.examples.negative)),
            ("count", &req.num_suggestions.to_string()),
            ("bindings", &render_bindings(&req.template)),
            ("trace", &render_trace(&req.trace)),
        ],
    )
}

/// The few-shot suggestion prompt. Pure function of its inputs.
pub fn build_prompt(req: &SuggestionRequest, profile: &AgentProfile, prompts: &PromptSet) -> ChatRequest {
    ChatRequest::new(
        "You suggest answerable queries for a tool-calling agent.",
        render_suggest(&prompts.suggest, req, profile),
    )
    .with_schema(schema::TEMPLATES)
}

fn transcript_push(transcript: &mut String, label: &str, text: &str) {
    if !transcript.is_empty() {
        transcript.push_str("\n\n");
    }
    transcript.push_str(&format!("### {label}\n{text}"));
}

fn parse_json(text: &str) -> Result<Value, GenerationError> {
    serde_json::from_str(strip_code_fence(text)).map_err(|e| GenerationError::Malformed(e.to_string()))
}

/// Checks a generated template; returns the reason it is unusable, if any.
fn template_problem(t: &str, req: &SuggestionRequest, profile: &AgentProfile) -> Option<String> {
    if t.trim().is_empty() {
        return Some("empty template".into());
    }
    if !masks_well_formed(t) {
        return Some(format!("malformed mask in `{t}`"));
    }
    for m in parse_masks(t) {
        if !profile.knows(m.name) && req.template.binding(m.name).is_none() {
            return Some(format!("unknown mask [{}] in `{t}`", m.name));
        }
    }
    None
}

fn parse_templates(text: &str) -> Result<Vec<String>, GenerationError> {
    let v = parse_json(text)?;
    let items = v
        .get("templates")
        .and_then(Value::as_array)
        .ok_or_else(|| GenerationError::Malformed("missing `templates` array".into()))?;
    Ok(items.iter().filter_map(Value::as_str).map(|s| s.trim().to_string()).collect())
}

fn absorb(
    text: &str,
    req: &SuggestionRequest,
    profile: &AgentProfile,
    kept: &mut Vec<String>,
    rejected: &mut Vec<String>,
) {
    match parse_templates(text) {
        Ok(list) => {
            for t in list {
                match template_problem(&t, req, profile) {
                    Some(why) => rejected.push(why),
                    None if !kept.contains(&t) => kept.push(t),
                    None => {}
                }
            }
        }
        Err(e) => rejected.push(e.to_string()),
    }
}

/// Asks for templates, keeps the valid ones and requests the shortfall once.
pub fn generate_templates(
    req: &SuggestionRequest,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
    transcript: &mut String,
) -> Result<Vec<String>, GenerationError> {
    let mut chat = build_prompt(req, profile, prompts);
    transcript_push(transcript, "prompt", chat.last_user());
    let first = provider.chat(&chat)?;
    transcript_push(transcript, "response", &first);

    let mut kept: Vec<String> = Vec::new();
    let mut rejected: Vec<String> = Vec::new();
    absorb(&first, req, profile, &mut kept, &mut rejected);
    if kept.len() < req.num_suggestions {
        let missing = req.num_suggestions - kept.len();
        let note = if rejected.is_empty() {
            "too few templates".to_string()
        } else {
            rejected.join("; ")
        };
        chat.messages.push(ChatMessage::assistant(first));
        chat.messages.push(ChatMessage::user(format!(
            "Some templates were rejected ({note}). Return {missing} more in the same JSON format, using only masks of known entities."
        )));
        let second = provider.chat(&chat)?;
        transcript_push(transcript, "retry", &second);
        absorb(&second, req, profile, &mut kept, &mut rejected);
    }
    if kept.is_empty() {
        return Err(GenerationError::Exhausted("all generated templates were invalid".into()));
    }
    kept.truncate(req.num_suggestions);
    Ok(kept)
}

fn parse_issues(v: &Value) -> BTreeMap<String, bool> {
    v.get("issues")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| v.as_bool().map(|b| (k.clone(), b)))
                .collect()
        })
        .unwrap_or_default()
}

/// Entities of the original query referenced by any of `templates`.
fn reused_entities(req: &SuggestionRequest, templates: &[String]) -> BTreeSet<String> {
    templates
        .iter()
        .flat_map(|t| parse_masks(t).into_iter().map(|m| m.name.to_string()).collect::<Vec<_>>())
        .filter(|name| req.template.binding(name).is_some())
        .collect()
}

/// Asks the provider which original values caused a data issue in the trace.
/// Skips the call when no template reuses an original value.
pub fn attribute_issues(
    req: &SuggestionRequest,
    templates: &[String],
    template_note: &str,
    provider: &dyn Provider,
    prompts: &PromptSet,
    transcript: &mut String,
) -> Result<BTreeMap<String, bool>, GenerationError> {
    if reused_entities(req, templates).is_empty() {
        return Ok(BTreeMap::new());
    }
    let body = render(
        &prompts.impute,
        &[
            ("bindings", &render_bindings(&req.template)),
            ("template_note", template_note),
            ("trace", &render_trace(&req.trace)),
        ],
    );
    let chat = ChatRequest::new("You attribute data issues to query values.", body)
        .with_schema(schema::ATTRIBUTION);
    transcript_push(transcript, "attribution prompt", chat.last_user());
    let resp = provider.chat(&chat)?;
    transcript_push(transcript, "attribution response", &resp);
    Ok(parse_issues(&parse_json(&resp)?))
}

/// Values allowed at each priority step for one entity.
struct Candidates<'a> {
    original: Option<&'a str>,
    alternatives: Vec<&'a str>,
    examples: Vec<&'a str>,
}

fn candidates<'a>(
    entity: &str,
    req: &'a SuggestionRequest,
    profile: &'a AgentProfile,
    issues: &BTreeMap<String, bool>,
) -> Candidates<'a> {
    let original = req
        .template
        .binding(entity)
        .filter(|_| !issues.get(entity).copied().unwrap_or(false))
        .map(|b| b.raw_value.as_str());
    let alternatives = req
        .trace
        .tool_calls()
        .filter_map(|c| c.alternatives.as_ref()?.get(entity))
        .flatten()
        .map(String::as_str)
        .collect();
    let examples = profile
        .tool_schemas
        .iter()
        .filter(|s| s.entity_name == entity)
        .flat_map(|s| s.example_values.iter().map(String::as_str))
        .collect();
    Candidates {
        original,
        alternatives,
        examples,
    }
}

/// Imputes every mask of `template_text` by the priority original value,
/// tool alternative, tool example. `preferred` values are used when they are
/// allowed at the step that applies.
pub fn impute_with_issues(
    template_text: &str,
    req: &SuggestionRequest,
    profile: &AgentProfile,
    issues: &BTreeMap<String, bool>,
    preferred: &BTreeMap<String, String>,
) -> Result<(BTreeMap<String, ImputedValue>, Vec<ImputationDecision>), GenerationError> {
    let mut values = BTreeMap::new();
    let mut decisions = Vec::new();
    for m in parse_masks(template_text) {
        if values.contains_key(m.name) {
            continue;
        }
        let c = candidates(m.name, req, profile, issues);
        let pref = preferred.get(m.name).map(String::as_str);
        let pick = |allowed: &[&str]| -> Option<String> {
            match pref {
                Some(p) if allowed.contains(&p) => Some(p.to_string()),
                _ => allowed.first().map(|s| s.to_string()),
            }
        };
        let mut rejected = Vec::new();
        let chosen = if let Some(orig) = c.original {
            Some((orig.to_string(), Provenance::Original))
        } else {
            rejected.push(Provenance::Original);
            if let Some(v) = pick(&c.alternatives) {
                Some((v, Provenance::ToolAlternative))
            } else {
                rejected.push(Provenance::ToolAlternative);
                pick(&c.examples).map(|v| (v, Provenance::ToolExample))
            }
        };
        let (value, provenance) = chosen.ok_or_else(|| GenerationError::NoValue(m.name.to_string()))?;
        decisions.push(ImputationDecision {
            entity: m.name.to_string(),
            rejected,
            chosen: provenance,
        });
        values.insert(m.name.to_string(), ImputedValue { value, provenance });
    }
    Ok((values, decisions))
}

/// Attribution call followed by imputation for a single template.
pub fn impute_values(
    template_text: &str,
    req: &SuggestionRequest,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
) -> Result<BTreeMap<String, ImputedValue>, GenerationError> {
    let mut transcript = String::new();
    let issues = attribute_issues(req, &[template_text.to_string()], "", provider, prompts, &mut transcript)?;
    Ok(impute_with_issues(template_text, req, profile, &issues, &BTreeMap::new())?.0)
}

fn finish(
    template: &str,
    req: &SuggestionRequest,
    profile: &AgentProfile,
    issues: &BTreeMap<String, bool>,
    preferred: &BTreeMap<String, String>,
) -> Result<Suggestion, GenerationError> {
    let (imputed, decisions) = impute_with_issues(template, req, profile, issues, preferred)?;
    let plain: BTreeMap<String, String> = imputed.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect();
    let query = instantiate(template, &plain).map_err(|e| GenerationError::Malformed(e.to_string()))?;
    if parse_masks(&query)
        .iter()
        .any(|m| profile.knows(m.name) || req.template.binding(m.name).is_some())
    {
        return Err(GenerationError::Malformed(format!("suggestion `{query}` still contains a mask")));
    }
    Ok(Suggestion {
        suggested_query: query,
        source_template: template.to_string(),
        imputed_values: imputed,
        decisions,
    })
}

fn collect(
    templates: &[String],
    req: &SuggestionRequest,
    profile: &AgentProfile,
    issues: &BTreeMap<String, bool>,
    preferred: &[BTreeMap<String, String>],
) -> Result<Vec<Suggestion>, GenerationError> {
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    let mut last_err = None;
    for (i, t) in templates.iter().enumerate() {
        match finish(t, req, profile, issues, preferred.get(i).unwrap_or(&empty)) {
            Ok(s) => out.push(s),
            Err(e) => {
                tracing::debug!(template = %t, error = %e, "suggestion dropped");
                last_err = Some(e);
            }
        }
    }
    if out.is_empty() {
        return Err(GenerationError::Exhausted(
            last_err.map(|e| e.to_string()).unwrap_or_else(|| "no templates".into()),
        ));
    }
    Ok(out)
}

/// Full suggestion pipeline in the given mode.
pub fn suggest(
    req: &SuggestionRequest,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
    mode: GenerationMode,
) -> Result<SuggestionResult, GenerationError> {
    let mut transcript = String::new();
    let suggestions = match mode {
        GenerationMode::FewShot => {
            let templates = generate_templates(req, profile, provider, prompts, &mut transcript)?;
            let issues = attribute_issues(req, &templates, "", provider, prompts, &mut transcript)?;
            collect(&templates, req, profile, &issues, &[])?
        }
        GenerationMode::RetrievalOnly => {
            let top = req.examples.positive.first().ok_or_else(|| {
                GenerationError::Exhausted("no positive example retrieved".into())
            })?;
            let template = top.template.template_text.clone();
            let note = render(&prompts.retrieval_only_note, &[("template", &template)]);
            let templates = vec![template];
            let issues = attribute_issues(req, &templates, &note, provider, prompts, &mut transcript)?;
            collect(&templates, req, profile, &issues, &[])?
        }
        GenerationMode::Combined => combined(req, profile, provider, prompts, &mut transcript)?,
    };
    Ok(SuggestionResult {
        suggestions,
        prompt_transcript: transcript,
    })
}

fn combined(
    req: &SuggestionRequest,
    profile: &AgentProfile,
    provider: &dyn Provider,
    prompts: &PromptSet,
    transcript: &mut String,
) -> Result<Vec<Suggestion>, GenerationError> {
    let mut chat = ChatRequest::new(
        "You suggest answerable queries for a tool-calling agent.",
        render_suggest(&prompts.combined, req, profile),
    )
    .with_schema(schema::COMBINED);
    transcript_push(transcript, "prompt", chat.last_user());
    let mut attempt = 0;
    loop {
        let resp = provider.chat(&chat)?;
        transcript_push(transcript, if attempt == 0 { "response" } else { "retry" }, &resp);
        let parsed = parse_combined(&resp).and_then(|(items, issues)| {
            let mut templates = Vec::new();
            let mut preferred = Vec::new();
            for (t, values) in items {
                if template_problem(&t, req, profile).is_none() && !templates.contains(&t) {
                    templates.push(t);
                    preferred.push(values);
                }
            }
            templates.truncate(req.num_suggestions);
            collect(&templates, req, profile, &issues, &preferred)
        });
        match parsed {
            Ok(s) => return Ok(s),
            Err(e) if attempt == 0 && !matches!(e, GenerationError::Provider(_)) => {
                chat.messages.push(ChatMessage::assistant(resp));
                chat.messages.push(ChatMessage::user(format!(
                    "The answer was rejected: {e}. Return valid suggestions in the same JSON format."
                )));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

type CombinedItems = (Vec<(String, BTreeMap<String, String>)>, BTreeMap<String, bool>);

fn parse_combined(text: &str) -> Result<CombinedItems, GenerationError> {
    let v = parse_json(text)?;
    let items = v
        .get("suggestions")
        .and_then(Value::as_array)
        .ok_or_else(|| GenerationError::Malformed("missing `suggestions` array".into()))?;
    let mut out = Vec::new();
    for item in items {
        let Some(t) = item.get("template").and_then(Value::as_str) else {
            continue;
        };
        let values = item
            .get("values")
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
                    .collect()
            })
            .unwrap_or_default();
        out.push((t.trim().to_string(), values));
    }
    Ok((out, parse_issues(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        BinaryAnswerability, Embedding, ToolCallRecord, ValueBinding, WorkflowStep,
    };
    use crate::providers::{CountingProvider, Rule, RuleMatch, Rulebook, SimProvider};
    use crate::templating::{ToolArgumentSchema, ValueType};

    fn profile() -> AgentProfile {
        AgentProfile {
            agent_id: "inv".into(),
            purpose: "invoice processing".into(),
            tool_schemas: vec![
                ToolArgumentSchema {
                    tool_name: "execute_sql".into(),
                    entity_name: "timespan".into(),
                    value_type: ValueType::DateRange,
                    example_values: vec!["March 2024".into()],
                    alternative_value_hint: true,
                },
                ToolArgumentSchema {
                    tool_name: "execute_sql".into(),
                    entity_name: "company_code".into(),
                    value_type: ValueType::Identifier,
                    example_values: vec!["C1000".into(), "C1001".into()],
                    alternative_value_hint: false,
                },
            ],
            static_instructions: String::new(),
            reference_year: Some(2024),
        }
    }

    fn example(t: &str, label: BinaryAnswerability, expl: &str) -> LabeledExample {
        LabeledExample {
            id: crate::domain::new_example_id(),
            template: TemplatedQuery {
                template_text: t.into(),
                bindings: vec![],
                source_query: t.into(),
            },
            embedding: Embedding::new(vec![1.0, 0.0]).unwrap(),
            answerability: label,
            explanation: expl.into(),
            created_at: chrono::Utc::now(),
        }
    }

    fn request(alternatives: bool) -> SuggestionRequest {
        let template = TemplatedQuery {
            template_text: "How many orders were paid late in [timespan]?".into(),
            bindings: vec![ValueBinding {
                entity_name: "timespan".into(),
                raw_value: "September 2021".into(),
                normalized_value: Some("2021-09-01 to 2021-09-30".into()),
                unknown: false,
            }],
            source_query: "How many orders were paid late in September 2021?".into(),
        };
        let call = ToolCallRecord {
            tool_name: "execute_sql".into(),
            arguments: [("timespan".to_string(), "September 2021".to_string())].into(),
            response_text: if alternatives { "∅".into() } else { "12 rows".into() },
            response_empty: alternatives,
            alternatives: alternatives.then(|| [("timespan".to_string(), vec!["07/2024".to_string()])].into()),
        };
        let trace = WorkflowTrace {
            query: template.source_query.clone(),
            steps: vec![WorkflowStep::ToolCall(call)],
            final_response: "No information about orders.".into(),
            agent_id: "inv".into(),
        };
        let examples = ExampleSets {
            positive: vec![
                example("What is the total number of invoices paid late in [timespan]?", BinaryAnswerability::Answerable, "Answered with a count."),
                example("List all invoices paid late for [company_code].", BinaryAnswerability::Answerable, "Answered with a list."),
            ],
            negative: vec![
                example("How many orders are open?", BinaryAnswerability::NotAnswerable, "Response did not provide specific information."),
                example("Show shipments in [timespan].", BinaryAnswerability::NotAnswerable, "No table relating to shipments."),
            ],
        };
        SuggestionRequest::new(
            template,
            trace,
            AnswerabilityVerdict::new(AnswerabilityCategory::NoWorkflow, "No table relating to orders.").unwrap(),
            examples,
            3,
        )
        .unwrap()
    }

    fn provider(rules: &[(&str, &str)]) -> CountingProvider<SimProvider<Rulebook>> {
        let rules = rules
            .iter()
            .map(|(n, r)| Rule {
                when: RuleMatch {
                    contains: vec![n.to_string()],
                    ..Default::default()
                },
                respond: r.to_string(),
            })
            .collect();
        CountingProvider::new(SimProvider::new(8, Rulebook::new(rules, None).unwrap()))
    }

    #[test]
    fn prompt_layout_and_determinism() {
        let req = request(false);
        let a = build_prompt(&req, &profile(), &PromptSet::default());
        let b = build_prompt(&req, &profile(), &PromptSet::default());
        assert_eq!(a, b);
        let text = a.last_user();
        let i_instr = text.find("was not answered").unwrap();
        let i_pos = text.find("Positive examples:").unwrap();
        let i_neg = text.find("Negative examples:").unwrap();
        let i_task = text.find("Generate an answerable template query that is similar").unwrap();
        assert!(i_instr < i_pos && i_pos < i_neg && i_neg < i_task);
        assert!(text[i_neg..].contains("Response did not provide specific information."));
        let p1 = text.find("total number of invoices").unwrap();
        let p2 = text.find("List all invoices").unwrap();
        assert!(p1 < p2);
    }

    #[test]
    fn empty_sections_marked() {
        let mut req = request(false);
        req.examples = ExampleSets::default();
        let text = build_prompt(&req, &profile(), &PromptSet::default()).last_user().to_string();
        assert_eq!(text.matches(NO_EXAMPLES).count(), 2);
    }

    #[test]
    fn answerable_verdict_rejected() {
        let r = request(false);
        let err = SuggestionRequest::new(
            r.template.clone(),
            r.trace.clone(),
            AnswerabilityVerdict::new(AnswerabilityCategory::Answerable, "ok").unwrap(),
            ExampleSets::default(),
            3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn end_to_end_keeps_original_value() {
        let p = provider(&[
            (
                "Generate an answerable",
                r#"{"templates":["What is the total number of invoices paid late in [timespan]?","List all invoices paid late for [company_code].","Count [foo]"]}"#,
            ),
            ("Some templates were rejected", r#"{"templates":[]}"#),
            ("attribute", r#"{"issues":{"timespan":false}}"#),
        ]);
        let out = suggest(&request(false), &profile(), &p, &PromptSet::default(), GenerationMode::FewShot).unwrap();
        assert_eq!(
            out.suggestions[0].suggested_query,
            "What is the total number of invoices paid late in September 2021?"
        );
        assert_eq!(out.suggestions[0].imputed_values["timespan"].provenance, Provenance::Original);
        assert_eq!(out.suggestions[1].suggested_query, "List all invoices paid late for C1000.");
        assert_eq!(out.suggestions[1].imputed_values["company_code"].provenance, Provenance::ToolExample);
        assert_eq!(out.suggestions[1].decisions[0].rejected, vec![Provenance::Original, Provenance::ToolAlternative]);
        assert_eq!(out.suggestions.len(), 2);
        assert!(p.chat_calls() <= 4);
    }

    #[test]
    fn tool_alternative_used_when_original_caused_issue() {
        let p = provider(&[("attribute", r#"{"issues":{"timespan":true}}"#)]);
        let v = impute_values(
            "How many invoices in [timespan]?",
            &request(true),
            &profile(),
            &p,
            &PromptSet::default(),
        )
        .unwrap();
        assert_eq!(
            v["timespan"],
            ImputedValue {
                value: "07/2024".into(),
                provenance: Provenance::ToolAlternative
            }
        );
    }

    #[test]
    fn unknown_entity_without_any_source_fails() {
        let mut req = request(false);
        req.template.bindings.clear();
        let err = impute_with_issues("[vendor]", &req, &profile(), &BTreeMap::new(), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, GenerationError::NoValue(e) if e == "vendor"));
    }

    #[test]
    fn exhaustion_when_everything_invalid() {
        let p = provider(&[("Generate an answerable", r#"{"templates":["[foo] bar"]}"#)]);
        let mut req = request(false);
        req.num_suggestions = 1;
        let err = suggest(&req, &profile(), &p, &PromptSet::default(), GenerationMode::FewShot).unwrap_err();
        assert!(matches!(err, GenerationError::Exhausted(_)));
        assert_eq!(p.chat_calls(), 2);
    }

    #[test]
    fn retrieval_only_reuses_top_positive() {
        let p = provider(&[("Do not change the template", r#"{"issues":{"timespan":false}}"#)]);
        let out = suggest(&request(false), &profile(), &p, &PromptSet::default(), GenerationMode::RetrievalOnly).unwrap();
        assert_eq!(out.suggestions.len(), 1);
        assert_eq!(
            out.suggestions[0].source_template,
            "What is the total number of invoices paid late in [timespan]?"
        );
        assert_eq!(p.chat_calls(), 1);
    }

    #[test]
    fn combined_mode_validates_values() {
        let p = provider(&[(
            "fill every mask",
            r#"{"suggestions":[{"template":"List all invoices paid late for [company_code].","values":{"company_code":"C1001"}},{"template":"Invoices in [timespan]","values":{"timespan":"made up"}}],"issues":{"timespan":false}}"#,
        )]);
        let out = suggest(&request(false), &profile(), &p, &PromptSet::default(), GenerationMode::Combined).unwrap();
        assert_eq!(out.suggestions[0].suggested_query, "List all invoices paid late for C1001.");
        assert_eq!(out.suggestions[1].suggested_query, "Invoices in September 2021");
        assert_eq!(p.chat_calls(), 1);
    }

    #[test]
    fn explanations_truncated() {
        let mut req = request(false);
        req.examples.negative[0].explanation = "x".repeat(2000);
        let text = build_prompt(&req, &profile(), &PromptSet::default()).last_user().to_string();
        assert!(text.contains(&"x".repeat(MAX_EXPLANATION_CHARS)));
        assert!(!text.contains(&"x".repeat(MAX_EXPLANATION_CHARS + 1)));
    }
}
