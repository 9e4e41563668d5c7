//! Rule-backed stand-in for the language model, driven by a [`Scenario`].

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde_json::json;

use super::{Scenario, SlotKind, Slots};
use crate::labeling::unit_hash;
use crate::prompts::extract_tagged;
use crate::providers::{schema, ChatRequest, ProviderError, Responder};

pub const ANSWERED_EXPLANATION: &str = "This was answered because the response contains the requested data.";

#[derive(Debug, Clone)]
pub struct ScenarioModel {
    scenario: Arc<Scenario>,
}

/// One parsed line of a rendered trace.
struct StepLine<'a> {
    tool: &'a str,
    args: Vec<(&'a str, &'a str)>,
    empty: bool,
    response: &'a str,
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+\. tool (\w+)\((.*?)\)( -> \[empty\])? -> (.*)$").expect("static regex"))
}

fn parse_steps(text: &str) -> Vec<StepLine<'_>> {
    let body = extract_tagged(text, "steps").unwrap_or("");
    body.lines()
        .filter_map(|l| step_re().captures(l.trim()))
        .map(|c| {
            let args = c
                .get(2)
                .map(|m| m.as_str())
                .unwrap_or("")
                .split(", ")
                .filter_map(|kv| kv.split_once('='))
                .collect();
            StepLine {
                tool: c.get(1).map_or("", |m| m.as_str()),
                args,
                empty: c.get(3).is_some(),
                response: c.get(4).map_or("", |m| m.as_str()),
            }
        })
        .collect()
}

/// Template and explanation pairs under a heading, as rendered by the generation prompt.
fn parse_section<'a>(text: &'a str, heading: &str) -> Vec<(&'a str, &'a str)> {
    let Some(start) = text.find(heading) else {
        return Vec::new();
    };
    let body = &text[start + heading.len()..];
    let end = body.find("\n\n").unwrap_or(body.len());
    let mut out = Vec::new();
    let mut lines = body[..end].lines().peekable();
    while let Some(line) = lines.next() {
        if let Some(t) = line.strip_prefix("- Template: ") {
            let expl = lines
                .peek()
                .and_then(|l| l.strip_prefix("  Explanation: "))
                .unwrap_or("");
            out.push((t, expl));
        }
    }
    out
}

impl ScenarioModel {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        ScenarioModel { scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn templating(&self, req: &ChatRequest) -> String {
        let query = extract_tagged(req.last_user(), "query").unwrap_or_else(|| req.last_user());
        let entities: Vec<_> = self
            .scenario
            .extract_entities(query)
            .into_iter()
            .map(|(name, value)| json!({"name": name, "value": value}))
            .collect();
        json!({ "entities": entities }).to_string()
    }

    fn verdict(&self, req: &ChatRequest) -> String {
        let text = req.messages.first().map_or("", |m| m.content.as_str());
        let steps = parse_steps(text);
        let (category, explanation) = match steps.iter().find(|s| s.empty) {
            Some(s) if matches!(s.tool, "execute_sql" | "python") => {
                let args: Vec<String> = s.args.iter().map(|(k, v)| format!("{k}={v}")).collect();
                (
                    "no_knowledge",
                    format!("The workflow ran but no data was found for {}.", args.join(", ")),
                )
            }
            Some(s) => ("no_workflow", s.response.to_string()),
            None if steps.is_empty() => ("no_workflow", "The agent did not run any workflow.".to_string()),
            None => ("answerable", ANSWERED_EXPLANATION.to_string()),
        };
        json!({"category": category, "explanation": explanation}).to_string()
    }

    /// Rewrites the unanswered template using the few-shot examples.
    ///
    /// A slot value is supported when some positive example uses it and
    /// refuted when a negative explanation quotes its phrase. Refuted and
    /// unsupported slots take the value of the first positive that differs.
    /// When nothing changes but some slot is unsupported, one such slot,
    /// picked by a hash of the template, is changed the same way.
    pub fn rewrite(&self, template: &str, positives: &[&str], negative_explanations: &[&str]) -> Vec<String> {
        let sc = &self.scenario;
        let pos: Vec<Slots> = positives.iter().filter_map(|t| sc.slots_of(t)).collect();
        let mut out: Vec<String> = Vec::new();
        if let Some(q) = sc.slots_of(template) {
            let supported = |k: SlotKind, s: Slots| pos.iter().any(|p| p.get(k) == s.get(k));
            let refuted = |k: SlotKind, s: Slots| {
                sc.phrase(k, s).is_some_and(|ph| {
                    let quoted = format!("\"{ph}\"");
                    negative_explanations.iter().any(|e| e.contains(&quoted))
                })
            };
            let replace = |k: SlotKind, s: Slots| -> Slots {
                match pos.iter().find(|p| p.get(k) != s.get(k)) {
                    Some(p) => s.with(k, p.get(k)),
                    None => s,
                }
            };
            let mut s = q;
            for k in SlotKind::ALL {
                if refuted(k, q) && !supported(k, q) {
                    s = replace(k, s);
                }
            }
            if s == q {
                let unsupported: Vec<SlotKind> = SlotKind::ALL.into_iter().filter(|k| !supported(*k, q)).collect();
                if !unsupported.is_empty() && !pos.is_empty() {
                    let pick = (unit_hash(0, template) * unsupported.len() as f64) as usize;
                    s = replace(unsupported[pick.min(unsupported.len() - 1)], s);
                }
            }
            out.push(sc.template(s));
        } else {
            out.push(positives.first().copied().unwrap_or(template).to_string());
        }
        for p in positives {
            if !out.iter().any(|o| o == p) {
                out.push(p.to_string());
            }
        }
        out
    }

    fn generation_inputs<'a>(&self, text: &'a str) -> (&'a str, Vec<&'a str>, Vec<&'a str>, usize) {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r#"The query "(.*)" was not answered\."#).expect("static regex"));
        let template = re.captures(text).and_then(|c| c.get(1)).map_or("", |m| m.as_str());
        static COUNT: OnceLock<Regex> = OnceLock::new();
        let count_re = COUNT.get_or_init(|| Regex::new(r"with (\d+) (?:templates|suggestions)").expect("static regex"));
        let count = count_re
            .captures(text)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(1usize);
        let positives = parse_section(text, "Positive examples:\n").into_iter().map(|(t, _)| t).collect();
        let negatives = parse_section(text, "Negative examples:\n").into_iter().map(|(_, e)| e).collect();
        (template, positives, negatives, count)
    }

    fn templates(&self, req: &ChatRequest) -> String {
        let text = req.messages.first().map_or("", |m| m.content.as_str());
        let (template, positives, negatives, count) = self.generation_inputs(text);
        let mut out = self.rewrite(template, &positives, &negatives);
        out.truncate(count.max(1));
        json!({ "templates": out }).to_string()
    }

    /// Entities used as arguments of the first empty tool call.
    fn issues(&self, text: &str, bindings: &[String]) -> BTreeMap<String, bool> {
        let steps = parse_steps(text);
        let blamed: Vec<&str> = steps
            .iter()
            .find(|s| s.empty)
            .map(|s| s.args.iter().map(|(k, _)| *k).collect())
            .unwrap_or_default();
        bindings.iter().map(|b| (b.clone(), blamed.contains(&b.as_str()))).collect()
    }

    fn bindings(text: &str) -> Vec<String> {
        let start = text
            .find("Original values:\n")
            .map(|i| i + "Original values:\n".len())
            .or_else(|| text.find("tool-call arguments:\n").map(|i| i + "tool-call arguments:\n".len()));
        let Some(start) = start else { return Vec::new() };
        text[start..]
            .lines()
            .map_while(|l| l.strip_prefix("- "))
            .filter_map(|l| l.split_once(" = ").map(|(k, _)| k.to_string()))
            .collect()
    }

    fn attribution(&self, req: &ChatRequest) -> String {
        let text = req.messages.first().map_or("", |m| m.content.as_str());
        json!({ "issues": self.issues(text, &Self::bindings(text)) }).to_string()
    }

    fn combined(&self, req: &ChatRequest) -> String {
        let text = req.messages.first().map_or("", |m| m.content.as_str());
        let (template, positives, negatives, count) = self.generation_inputs(text);
        let mut templates = self.rewrite(template, &positives, &negatives);
        templates.truncate(count.max(1));
        let suggestions: Vec<_> = templates
            .into_iter()
            .map(|t| json!({"template": t, "values": {}}))
            .collect();
        json!({
            "suggestions": suggestions,
            "issues": self.issues(text, &Self::bindings(text)),
        })
        .to_string()
    }
}

impl Responder for ScenarioModel {
    fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        match req.response_schema.as_deref() {
            Some(schema::TEMPLATING) => Ok(self.templating(req)),
            Some(schema::VERDICT) => Ok(self.verdict(req)),
            Some(schema::TEMPLATES) => Ok(self.templates(req)),
            Some(schema::COMBINED) => Ok(self.combined(req)),
            Some(schema::ATTRIBUTION) => Ok(self.attribution(req)),
            _ => Err(ProviderError::NoRule),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AnswerabilityCategory;
    use crate::labeling::evaluate_answerability;
    use crate::prompts::PromptSet;
    use crate::providers::SimProvider;
    use crate::templating::{instantiate_bindings, template_query};

    fn setup() -> (Arc<Scenario>, SimProvider<ScenarioModel>) {
        let sc = Arc::new(Scenario::invoices());
        (sc.clone(), SimProvider::new(64, ScenarioModel::new(sc)))
    }

    #[test]
    fn labels_match_ground_truth() {
        let (sc, p) = setup();
        for item in sc.generate_labeled(300, 4) {
            let v = evaluate_answerability(&item.trace, &sc.profile, &p, &PromptSet::default()).unwrap();
            assert_eq!(v.category, item.category, "{}", item.trace.query);
        }
    }

    #[test]
    fn no_workflow_explanation_quotes_phrase() {
        let (sc, p) = setup();
        let t = sc.execute("How many shipments are there?");
        let v = evaluate_answerability(&t, &sc.profile, &p, &PromptSet::default()).unwrap();
        assert_eq!(v.category, AnswerabilityCategory::NoWorkflow);
        assert_eq!(v.explanation, "No table relating to \"shipments\".");
    }

    #[test]
    fn templating_round_trip() {
        let (sc, p) = setup();
        for item in sc.generate_labeled(200, 2) {
            let tq = template_query(&item.trace.query, &sc.profile, &p, &PromptSet::default()).unwrap();
            assert_eq!(tq.template_text, item.template);
            assert_eq!(instantiate_bindings(&tq).unwrap(), item.trace.query);
        }
    }

    #[test]
    fn rewrite_replaces_refuted_slot() {
        let (sc, _) = setup();
        let m = ScenarioModel::new(sc);
        let out = m.rewrite(
            "What is the average amount of overdue invoices in [timespan]?",
            &["What is the total amount of overdue invoices in [timespan]?"],
            &["The \"average amount\" calculation requires the Python tool, which is not available."],
        );
        assert_eq!(out[0], "What is the total amount of overdue invoices in [timespan]?");
        let keep = m.rewrite("How many invoices are there?", &["How many invoices are there?"], &[]);
        assert_eq!(keep, vec!["How many invoices are there?".to_string()]);
        let none = m.rewrite("How many orders are there?", &[], &[]);
        assert_eq!(none[0], "How many orders are there?");
    }
}
