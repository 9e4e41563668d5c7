//! Deterministic synthetic agent used for tests, evaluation and the `sim` provider.
//!
//! A [`Scenario`] describes a tabular knowledge base and a query grammar of
//! operations, subjects and filters. [`Scenario::execute`] runs a query
//! through a rule-based workflow and returns a trace whose shape encodes the
//! outcome: a failed table, column or calculation lookup (no workflow), an
//! empty SQL result (no knowledge), or an answer.
//! [`ScenarioModel`] plays the language model against the same grammar.

mod model;

pub use model::ScenarioModel;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    parse_masks, AnswerabilityCategory, BinaryAnswerability, ToolCallRecord, WorkflowStep,
    WorkflowTrace,
};
use crate::templating::{instantiate, normalize_value, AgentProfile, ToolArgumentSchema, ValueType};

/// The invoice scenario shipped with the crate.
pub const INVOICES_TOML: &str = include_str!("../../assets/scenarios/invoices.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Op {
    pub name: String,
    pub phrase: String,
    pub pattern: String,
    pub capability: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub phrase: String,
    #[serde(default)]
    pub table: Option<String>,
    #[serde(default)]
    pub status: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub name: String,
    pub pattern: String,
    #[serde(default)]
    pub phrase: Option<String>,
    /// Column the filter maps to; none means the agent cannot apply it.
    #[serde(default)]
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticExample {
    pub template: String,
    pub answerability: BinaryAnswerability,
    pub explanation: String,
}

/// Relative weights of the three outcomes in generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub no_workflow: f64,
    pub no_knowledge: f64,
    pub answerable: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    agent_id: String,
    #[serde(default)]
    purpose: String,
    #[serde(default)]
    static_instructions: String,
    #[serde(default)]
    reference_year: Option<i32>,
    capabilities: Vec<String>,
    mix: Mix,
    ops: Vec<Op>,
    subjects: Vec<Subject>,
    filters: Vec<Filter>,
    tool_schemas: Vec<ToolArgumentSchema>,
    #[serde(default)]
    absent_values: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    static_examples: Vec<StaticExample>,
    tables: Vec<Table>,
}

/// Position of a query in the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slots {
    pub op: usize,
    pub subject: usize,
    pub filter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Op,
    Subject,
    Filter,
}

impl SlotKind {
    pub const ALL: [SlotKind; 3] = [SlotKind::Op, SlotKind::Subject, SlotKind::Filter];
}

impl Slots {
    pub fn get(&self, kind: SlotKind) -> usize {
        match kind {
            SlotKind::Op => self.op,
            SlotKind::Subject => self.subject,
            SlotKind::Filter => self.filter,
        }
    }

    pub fn with(mut self, kind: SlotKind, value: usize) -> Self {
        match kind {
            SlotKind::Op => self.op = value,
            SlotKind::Subject => self.subject = value,
            SlotKind::Filter => self.filter = value,
        }
        self
    }
}

/// One generated query with its ground-truth outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub trace: WorkflowTrace,
    pub category: AnswerabilityCategory,
    pub template: String,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub profile: AgentProfile,
    pub capabilities: BTreeSet<String>,
    pub mix: Mix,
    pub ops: Vec<Op>,
    pub subjects: Vec<Subject>,
    pub filters: Vec<Filter>,
    pub tables: Vec<Table>,
    pub absent_values: BTreeMap<String, Vec<String>>,
    pub static_examples: Vec<StaticExample>,
    index: HashMap<String, Slots>,
    date_re: Regex,
    code_re: Regex,
    literals: Vec<(String, String)>,
}

impl Scenario {
    pub fn invoices() -> Self {
        Scenario::from_toml(INVOICES_TOML).expect("bundled scenario is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Scenario::build(file)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Scenario::build(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::from_json(&text)
        } else {
            Scenario::from_toml(&text)
        }
    }

    fn build(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        let profile = AgentProfile {
            agent_id: file.agent_id,
            purpose: file.purpose,
            tool_schemas: file.tool_schemas,
            static_instructions: file.static_instructions,
            reference_year: file.reference_year,
        };
        profile.validate().map_err(|e| invalid(e.to_string()))?;
        if file.ops.is_empty() || file.subjects.is_empty() || file.filters.is_empty() {
            return Err(invalid("ops, subjects and filters must be non-empty".into()));
        }
        let m = file.mix;
        if [m.no_workflow, m.no_knowledge, m.answerable].iter().any(|w| !w.is_finite() || *w < 0.0)
            || m.no_workflow + m.no_knowledge + m.answerable <= 0.0
        {
            return Err(invalid("mix weights must be non-negative with a positive sum".into()));
        }
        for op in &file.ops {
            if !op.pattern.contains("{subject}") || !op.pattern.contains("{filter}") {
                return Err(invalid(format!("op `{}` pattern needs {{subject}} and {{filter}}", op.name)));
            }
        }
        for t in &file.tables {
            if t.rows.iter().any(|r| r.len() != t.columns.len()) {
                return Err(invalid(format!("table `{}` has ragged rows", t.name)));
            }
        }
        for f in &file.filters {
            for mask in parse_masks(&f.pattern) {
                if !profile.knows(mask.name) {
                    return Err(invalid(format!("filter `{}` uses unknown entity `{}`", f.name, mask.name)));
                }
            }
            if let Some(col) = &f.column {
                for s in &file.subjects {
                    if let Some(t) = s.table.as_ref().and_then(|n| file.tables.iter().find(|t| &t.name == n)) {
                        if !t.columns.contains(col) {
                            return Err(invalid(format!("table `{}` lacks column `{col}`", t.name)));
                        }
                    }
                }
            }
        }
        let literals: Vec<(String, String)> = profile
            .tool_schemas
            .iter()
            .filter(|s| s.value_type == ValueType::Categorical)
            .flat_map(|s| {
                let entity = s.entity_name.clone();
                let mut vals: BTreeSet<String> = s.example_values.iter().cloned().collect();
                vals.extend(file.absent_values.get(&entity).cloned().unwrap_or_default());
                for f in file.filters.iter().filter(|f| filter_entity_of(f) == Some(entity.as_str())) {
                    if let Some(col) = &f.column {
                        for t in &file.tables {
                            if let Some(ci) = t.columns.iter().position(|c| c == col) {
                                vals.extend(t.rows.iter().map(|r| r[ci].clone()));
                            }
                        }
                    }
                }
                vals.into_iter().map(move |v| (entity.clone(), v))
            })
            .collect();
        let mut sc = Scenario {
            profile,
            capabilities: file.capabilities.into_iter().collect(),
            mix: file.mix,
            ops: file.ops,
            subjects: file.subjects,
            filters: file.filters,
            tables: file.tables,
            absent_values: file.absent_values,
            static_examples: file.static_examples,
            index: HashMap::new(),
            date_re: Regex::new(
                r"\b(?:(?:January|February|March|April|May|June|July|August|September|October|November|December) \d{4}|Q[1-4] \d{4}|\d{2}/\d{4}|(?:19|20)\d{2})\b",
            )
            .expect("static regex"),
            code_re: Regex::new(r"\bC\d{4}\b").expect("static regex"),
            literals,
        };
        for slots in sc.all_slots() {
            let t = sc.template(slots);
            if sc.index.insert(t.clone(), slots).is_some() {
                return Err(invalid(format!("ambiguous template `{t}`")));
            }
        }
        if sc.answerable_templates().is_empty() {
            return Err(invalid("no answerable template".into()));
        }
        Ok(sc)
    }

    /// Copy with a capability switched on or off.
    pub fn with_capability(&self, capability: &str, enabled: bool) -> Scenario {
        let mut sc = self.clone();
        if enabled {
            sc.capabilities.insert(capability.to_string());
        } else {
            sc.capabilities.remove(capability);
        }
        sc
    }

    pub fn agent_id(&self) -> &str {
        &self.profile.agent_id
    }

    pub fn all_slots(&self) -> Vec<Slots> {
        let mut out = Vec::new();
        for op in 0..self.ops.len() {
            for subject in 0..self.subjects.len() {
                for filter in 0..self.filters.len() {
                    out.push(Slots { op, subject, filter });
                }
            }
        }
        out
    }

    pub fn template(&self, s: Slots) -> String {
        self.ops[s.op]
            .pattern
            .replace("{subject}", &self.subjects[s.subject].phrase)
            .replace("{filter}", &self.filters[s.filter].pattern)
    }

    pub fn slots_of(&self, template: &str) -> Option<Slots> {
        self.index.get(template).copied()
    }

    /// Phrase the agent quotes when the slot is the reason for a failure.
    pub fn phrase(&self, kind: SlotKind, s: Slots) -> Option<&str> {
        match kind {
            SlotKind::Op => Some(&self.ops[s.op].phrase),
            SlotKind::Subject => Some(&self.subjects[s.subject].phrase),
            SlotKind::Filter => self.filters[s.filter].phrase.as_deref(),
        }
    }

    fn table_of(&self, subject: &Subject) -> Option<&Table> {
        let name = subject.table.as_ref()?;
        self.tables.iter().find(|t| &t.name == name)
    }

    /// Slots the agent cannot handle, in the order the workflow checks them.
    pub fn bad_slots(&self, s: Slots) -> Vec<SlotKind> {
        let mut out = Vec::new();
        if self.table_of(&self.subjects[s.subject]).is_none() {
            out.push(SlotKind::Subject);
        }
        let f = &self.filters[s.filter];
        if (filter_entity_of(f).is_some() || f.phrase.is_some()) && f.column.is_none() {
            out.push(SlotKind::Filter);
        }
        if !self.capabilities.contains(&self.ops[s.op].capability) {
            out.push(SlotKind::Op);
        }
        out
    }

    pub fn has_workflow(&self, s: Slots) -> bool {
        self.bad_slots(s).is_empty()
    }

    /// Templates the agent can execute, in grammar order.
    pub fn answerable_templates(&self) -> Vec<String> {
        self.all_slots()
            .into_iter()
            .filter(|s| self.has_workflow(*s))
            .map(|s| self.template(s))
            .collect()
    }

    pub fn filter_entity(&self, filter: usize) -> Option<&str> {
        filter_entity_of(&self.filters[filter])
    }

    /// Distinct values of the entity's column, in row order.
    pub fn present_values(&self, entity: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in self.filters.iter().filter(|f| filter_entity_of(f) == Some(entity)) {
            let Some(col) = &f.column else { continue };
            for t in &self.tables {
                if let Some(ci) = t.columns.iter().position(|c| c == col) {
                    for r in &t.rows {
                        if !out.contains(&r[ci]) {
                            out.push(r[ci].clone());
                        }
                    }
                }
            }
        }
        out
    }

    /// Entity values found in a query, ordered by position.
    pub fn extract_entities(&self, query: &str) -> Vec<(String, String)> {
        let mut hits: Vec<(usize, usize, String)> = Vec::new();
        for m in self.date_re.find_iter(query) {
            hits.push((m.start(), m.end(), "timespan".into()));
        }
        for m in self.code_re.find_iter(query) {
            hits.push((m.start(), m.end(), "company_code".into()));
        }
        for (entity, lit) in &self.literals {
            for (i, _) in query.match_indices(lit.as_str()) {
                let end = i + lit.len();
                let bounded = query[..i].chars().last().is_none_or(|c| !c.is_alphanumeric())
                    && query[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
                if bounded {
                    hits.push((i, end, entity.clone()));
                }
            }
        }
        // Longest match first at equal start, then drop overlaps left to right.
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut out = Vec::new();
        let mut cursor = 0;
        for (s, e, entity) in hits {
            if s >= cursor && self.profile.knows(&entity) {
                out.push((entity, query[s..e].to_string()));
                cursor = e;
            }
        }
        out
    }

    /// Template text and values of a query, using [`Scenario::extract_entities`].
    pub fn templatize(&self, query: &str) -> (String, Vec<(String, String)>) {
        let entities = self.extract_entities(query);
        let mut template = String::new();
        let mut rest = query;
        for (entity, value) in &entities {
            let i = rest.find(value.as_str()).expect("extracted from the query");
            template.push_str(&rest[..i]);
            template.push_str(&format!("[{entity}]"));
            rest = &rest[i + value.len()..];
        }
        template.push_str(rest);
        (template, entities)
    }

    fn value_matches(&self, entity: &str, query_value: &str, row_value: &str) -> bool {
        let vt = self.profile.schema_for(entity).map(|s| s.value_type);
        match vt {
            Some(ValueType::DateRange) | Some(ValueType::Date) => {
                let year = self.profile.year();
                let (Some(q), Some(r)) = (
                    normalize_value(ValueType::DateRange, query_value, year),
                    normalize_value(ValueType::DateRange, row_value, year),
                ) else {
                    return false;
                };
                let (qs, qe) = q.split_once(" to ").expect("normalized range");
                let (rs, re) = r.split_once(" to ").expect("normalized range");
                rs >= qs && re <= qe
            }
            _ => query_value == row_value,
        }
    }

    /// Runs a query through the synthetic agent.
    pub fn execute(&self, query: &str) -> WorkflowTrace {
        self.run(query).0
    }

    /// Runs a query and also returns its true outcome.
    pub fn run(&self, query: &str) -> (WorkflowTrace, AnswerabilityCategory) {
        let mut steps = Vec::new();
        let finish = |steps, response: String, cat| {
            (
                WorkflowTrace {
                    query: query.to_string(),
                    steps,
                    final_response: response,
                    agent_id: self.profile.agent_id.clone(),
                },
                cat,
            )
        };
        let (template, values) = self.templatize(query);
        let Some(slots) = self.slots_of(&template) else {
            steps.push(call("find_tables", &[("topic", query)], format!("No table relating to \"{}\".", query.trim()), true));
            return finish(steps, "I could not find any information to answer this question.".into(), AnswerabilityCategory::NoWorkflow);
        };
        let subject = &self.subjects[slots.subject];
        let filter = &self.filters[slots.filter];
        let op = &self.ops[slots.op];

        let Some(table) = self.table_of(subject) else {
            steps.push(call(
                "find_tables",
                &[("topic", &subject.phrase)],
                format!("No table relating to \"{}\".", subject.phrase),
                true,
            ));
            return finish(steps, format!("No information about {}.", subject.phrase), AnswerabilityCategory::NoWorkflow);
        };
        steps.push(call("find_tables", &[("topic", &subject.phrase)], format!("Found table {}.", table.name), false));

        let entity = filter_entity_of(filter);
        if let Some(phrase) = &filter.phrase {
            match &filter.column {
                None => {
                    steps.push(call("find_columns", &[("request", phrase)], format!("No column supports \"{phrase}\"."), true));
                    return finish(
                        steps,
                        format!("I cannot break down {} {phrase}.", subject.phrase),
                        AnswerabilityCategory::NoWorkflow,
                    );
                }
                Some(col) => steps.push(call("find_columns", &[("request", phrase)], format!("Column {col} matches."), false)),
            }
        }

        if !self.capabilities.contains(&op.capability) {
            let text = if op.capability == "python" {
                format!("The \"{}\" calculation requires the Python tool, which is not available.", op.phrase)
            } else {
                format!("The \"{}\" calculation is not supported by any tool.", op.phrase)
            };
            steps.push(call("plan_calculation", &[("operation", &op.phrase)], text, true));
            return finish(
                steps,
                format!("I am not able to compute the {} of {}.", op.phrase, subject.phrase),
                AnswerabilityCategory::NoWorkflow,
            );
        }
        steps.push(call(
            "plan_calculation",
            &[("operation", &op.phrase)],
            format!("Plan uses the {} tool.", op.capability),
            false,
        ));

        let col_of = |name: &str| table.columns.iter().position(|c| c == name);
        let mut args: Vec<(&str, &str)> = vec![("table", table.name.as_str())];
        if let Some(st) = &subject.status {
            args.push(("status", st));
        }
        let value = entity.and_then(|e| values.iter().find(|(n, _)| n == e).map(|(_, v)| v.as_str()));
        if let (Some(e), Some(v)) = (entity, value) {
            args.push((e, v));
        }
        let rows: Vec<&Vec<String>> = table
            .rows
            .iter()
            .filter(|r| match (&subject.status, col_of("status")) {
                (Some(st), Some(ci)) => &r[ci] == st,
                _ => true,
            })
            .filter(|r| match (entity, value, filter.column.as_deref().and_then(col_of)) {
                (Some(e), Some(v), Some(ci)) => self.value_matches(e, v, &r[ci]),
                (Some(_), None, _) => false,
                _ => true,
            })
            .collect();
        let surface = instantiate(&filter.pattern, &values.iter().cloned().collect()).unwrap_or_default();
        if rows.is_empty() {
            let mut rec = record("execute_sql", &args, "∅ (0 rows)".into(), true);
            if let (Some(e), Some(schema)) = (entity, entity.and_then(|e| self.profile.schema_for(e))) {
                if schema.alternative_value_hint {
                    let alts: Vec<String> = self.present_values(e).into_iter().rev().take(3).collect();
                    rec.alternatives = Some([(e.to_string(), alts)].into());
                }
            }
            steps.push(WorkflowStep::ToolCall(rec));
            return finish(steps, format!("There are 0 {}{surface}.", subject.phrase), AnswerabilityCategory::NoKnowledge);
        }
        steps.push(call("execute_sql", &args, format!("{} rows", rows.len()), false));
        let num = |name: &str| -> Vec<f64> {
            col_of(name)
                .map(|ci| rows.iter().filter_map(|r| r[ci].parse::<f64>().ok()).collect())
                .unwrap_or_default()
        };
        let answer = match op.name.as_str() {
            "count" => format!("There are {} {}{surface}.", rows.len(), subject.phrase),
            "list" => format!("Found {} {}{surface}.", rows.len(), subject.phrase),
            "total" => format!("The total amount is {:.2}.", num("amount").iter().sum::<f64>()),
            "average" => {
                let v = num("amount");
                format!("The average amount is {:.2}.", v.iter().sum::<f64>() / v.len().max(1) as f64)
            }
            "median_delay" => {
                let mut v = num("days_late");
                v.sort_by(f64::total_cmp);
                format!("The median is {} days late.", v.get(v.len() / 2).copied().unwrap_or(0.0))
            }
            other => format!("Computed {other} over {} rows.", rows.len()),
        };
        if op.capability == "python" {
            steps.push(call("python", &[("operation", &op.phrase)], answer.clone(), false));
        }
        finish(steps, answer, AnswerabilityCategory::Answerable)
    }

    /// `n` queries with the scenario's outcome mix, executed. Deterministic in `seed`.
    pub fn generate_dataset(&self, n: usize, seed: u64) -> Vec<WorkflowTrace> {
        self.generate_labeled(n, seed).into_iter().map(|d| d.trace).collect()
    }

    pub fn generate_labeled(&self, n: usize, seed: u64) -> Vec<DatasetItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = quotas(n, &[self.mix.no_workflow, self.mix.no_knowledge, self.mix.answerable]);
        let all = self.all_slots();
        let answerable: Vec<Slots> = all.iter().copied().filter(|s| self.has_workflow(*s)).collect();
        // Exactly one failing slot, so each failure has a single cause.
        let no_workflow: Vec<Slots> = all.iter().copied().filter(|s| self.bad_slots(*s).len() == 1).collect();
        let with_entity: Vec<Slots> = answerable
            .iter()
            .copied()
            .filter(|s| {
                self.filter_entity(s.filter)
                    .is_some_and(|e| self.absent_values.get(e).is_some_and(|v| !v.is_empty()))
            })
            .collect();
        let mut plan: Vec<(Slots, bool)> = Vec::with_capacity(n);
        let pools = [(&no_workflow, false), (&with_entity, true), (&answerable, false)];
        for ((pool, absent), count) in pools.iter().zip(counts) {
            if count > 0 {
                assert!(!pool.is_empty(), "scenario cannot produce the requested mix");
            }
            for _ in 0..count {
                plan.push((*pool.choose(&mut rng).expect("non-empty pool"), *absent));
            }
        }
        plan.shuffle(&mut rng);
        plan.into_iter()
            .map(|(slots, absent)| {
                let template = self.template(slots);
                let mut values = BTreeMap::new();
                for m in parse_masks(&template) {
                    let pool = if absent {
                        self.absent_values.get(m.name).cloned().unwrap_or_default()
                    } else {
                        self.present_values(m.name)
                    };
                    let v = pool.choose(&mut rng).cloned().unwrap_or_default();
                    values.insert(m.name.to_string(), v);
                }
                let query = instantiate(&template, &values).expect("values for every mask");
                let (trace, category) = self.run(&query);
                DatasetItem { trace, category, template }
            })
            .collect()
    }
}

fn filter_entity_of(f: &Filter) -> Option<&str> {
    parse_masks(&f.pattern).first().map(|m| m.name)
}

fn record(tool: &str, args: &[(&str, &str)], response: String, empty: bool) -> ToolCallRecord {
    ToolCallRecord {
        tool_name: tool.into(),
        arguments: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        response_text: response,
        response_empty: empty,
        alternatives: None,
    }
}

fn call(tool: &str, args: &[(&str, &str)], response: String, empty: bool) -> WorkflowStep {
    WorkflowStep::ToolCall(record(tool, args, response, empty))
}

/// Splits `n` into integer parts proportional to `weights` (largest remainder).
pub fn quotas(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}
