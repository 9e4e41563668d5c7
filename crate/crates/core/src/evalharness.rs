//! Offline evaluation: strategies, cross-validation, learning curves, threshold sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    dot, to_binary, AnswerabilityCategory, AnswerabilityVerdict, BinaryAnswerability, Embedding,
    LabeledExample, TemplatedQuery, WorkflowTrace,
};
use crate::generation::{suggest, GenerationError, GenerationMode, SuggestionRequest};
use crate::labeling::{evaluate_answerability, prepare, unit_hash, LabelNoise, LabelingError, PreparedQuery};
use crate::prompts::PromptSet;
use crate::providers::{embed_one, Provider, ProviderError};
use crate::retrieval::{retrieve_examples, ExampleSets, RetrievalConfig, RetrievalError};
use crate::simulation::Scenario;
use crate::store::{SimilarityStore, StoreError};
use crate::templating::AgentProfile;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    StaticFewShot,
    RetrievalOnly,
    DynamicFewShot,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::StaticFewShot, Strategy::RetrievalOnly, Strategy::DynamicFewShot];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::StaticFewShot => "static_few_shot",
            Strategy::RetrievalOnly => "retrieval_only",
            Strategy::DynamicFewShot => "dynamic_few_shot",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| EvalError::Invalid(format!("unknown strategy `{s}`")))
    }
}

/// Runs a suggested query against the agent.
pub trait Executor: Send + Sync {
    fn execute(&self, query: &str) -> WorkflowTrace;
}

impl Executor for Scenario {
    fn execute(&self, query: &str) -> WorkflowTrace {
        Scenario::execute(self, query)
    }
}

/// Everything the harness needs besides the dataset.
pub struct EvalContext<'a> {
    pub profile: &'a AgentProfile,
    pub provider: &'a dyn Provider,
    pub prompts: &'a PromptSet,
    pub executor: &'a dyn Executor,
    /// Fixed examples for the static strategy.
    pub static_examples: ExampleSets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub retrieval: RetrievalConfig,
    pub num_suggestions: usize,
    /// Generation mode for the static and dynamic strategies.
    pub mode: GenerationMode,
    pub folds: usize,
    pub seed: u64,
    /// Label flips applied to training examples.
    pub noise_rate: f64,
    pub strategies: Vec<Strategy>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            retrieval: RetrievalConfig::default(),
            num_suggestions: SuggestionRequest::DEFAULT_NUM_SUGGESTIONS,
            mode: GenerationMode::FewShot,
            folds: 5,
            seed: 1,
            noise_rate: 0.0,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

impl EvalConfig {
    fn noise(&self) -> LabelNoise {
        LabelNoise {
            rate: self.noise_rate,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        self.retrieval.validate()?;
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(EvalError::Invalid(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        if self.num_suggestions == 0 {
            return Err(EvalError::Invalid("num_suggestions must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(EvalError::Invalid("no strategy selected".into()));
        }
        Ok(())
    }
}

/// Outcome of the first suggestion for one query under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub fold: usize,
    pub query_id: String,
    pub strategy: Strategy,
    pub train_size: usize,
    pub query: String,
    pub suggestion: String,
    /// `None` marks a failed suggestion.
    pub suggested_category: Option<AnswerabilityCategory>,
    pub similarity: Option<f64>,
}

impl EvalRecord {
    pub fn outcome(&self) -> &'static str {
        self.suggested_category.map_or("failed", |c| c.as_str())
    }

    pub fn is_answerable(&self) -> bool {
        self.suggested_category == Some(AnswerabilityCategory::Answerable)
    }
}

/// A dataset trace with its label, template and embeddings computed once.
#[derive(Debug, Clone)]
pub struct PreparedTrace {
    pub query_id: String,
    pub trace: WorkflowTrace,
    pub verdict: AnswerabilityVerdict,
    pub prepared: PreparedQuery,
    /// Embedding of the raw query, for the similarity metric.
    pub query_embedding: Embedding,
}

impl PreparedTrace {
    /// Training example under `noise`, or `None` for no-knowledge.
    pub fn example(&self, noise: &LabelNoise) -> Option<LabeledExample> {
        let verdict = noise.apply(self.verdict.clone(), &self.query_id);
        let answerability = to_binary(verdict.category).ok()?;
        Some(LabeledExample {
            id: self.query_id.clone(),
            template: self.prepared.template.clone(),
            embedding: self.prepared.embedding.clone(),
            answerability,
            explanation: verdict.explanation,
            created_at: chrono::DateTime::UNIX_EPOCH,
        })
    }
}

pub fn query_id(index: usize) -> String {
    format!("q{index:05}")
}

/// Labels, templates and embeds every trace (in parallel, order preserved).
pub fn prepare_dataset(dataset: &[WorkflowTrace], ctx: &EvalContext<'_>) -> Result<Vec<PreparedTrace>, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Invalid("dataset is empty".into()));
    }
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, trace)| {
            let verdict = evaluate_answerability(trace, ctx.profile, ctx.provider, ctx.prompts)?;
            let prepared = prepare(&trace.query, ctx.profile, ctx.provider, ctx.prompts)?;
            let query_embedding = embed_one(ctx.provider, &trace.query)?;
            Ok(PreparedTrace {
                query_id: query_id(i),
                trace: trace.clone(),
                verdict,
                prepared,
                query_embedding,
            })
        })
        .collect()
}

/// Fold of every item: items sorted by a seeded hash of their id, dealt round-robin.
pub fn assign_folds(ids: &[String], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        unit_hash(seed, &ids[a])
            .total_cmp(&unit_hash(seed, &ids[b]))
            .then(ids[a].cmp(&ids[b]))
    });
    let mut out = vec![0; ids.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank % folds;
    }
    out
}

fn evaluate_one(
    item: &PreparedTrace,
    strategy: Strategy,
    store: &SimilarityStore,
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
    fold: usize,
) -> Result<EvalRecord, EvalError> {
    let examples = match strategy {
        Strategy::StaticFewShot => ctx.static_examples.clone(),
        _ => retrieve_examples(&item.prepared.embedding, store, &cfg.retrieval)?,
    };
    let mode = match strategy {
        Strategy::RetrievalOnly => GenerationMode::RetrievalOnly,
        _ => cfg.mode,
    };
    let mut record = EvalRecord {
        seed: cfg.seed,
        fold,
        query_id: item.query_id.clone(),
        strategy,
        train_size: store.len(),
        query: item.trace.query.clone(),
        suggestion: String::new(),
        suggested_category: None,
        similarity: None,
    };
    let req = SuggestionRequest::for_evaluation(
        item.prepared.template.clone(),
        item.trace.clone(),
        item.verdict.clone(),
        examples,
        cfg.num_suggestions,
    )
    .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let result = match suggest(&req, ctx.profile, ctx.provider, ctx.prompts, mode) {
        Ok(r) => r,
        Err(GenerationError::Provider(e)) if !matches!(e, ProviderError::NoRule) => return Err(e.into()),
        Err(e) => {
            tracing::debug!(query = %item.trace.query, %strategy, error = %e, "suggestion failed");
            return Ok(record);
        }
    };
    let Some(first) = result.suggestions.first() else {
        return Ok(record);
    };
    let executed = ctx.executor.execute(&first.suggested_query);
    let verdict = evaluate_answerability(&executed, ctx.profile, ctx.provider, ctx.prompts)?;
    let emb = embed_one(ctx.provider, &first.suggested_query)?;
    record.similarity = Some(dot(item.query_embedding.as_slice(), emb.as_slice()).clamp(-1.0, 1.0));
    record.suggested_category = Some(verdict.category);
    record.suggestion = first.suggested_query.clone();
    Ok(record)
}

fn build_store(
    items: &[&PreparedTrace],
    dimension: usize,
    agent: &str,
    noise: &LabelNoise,
) -> Result<SimilarityStore, EvalError> {
    let mut store = SimilarityStore::in_memory(dimension, agent)?;
    for it in items {
        if let Some(ex) = it.example(noise) {
            store.insert(ex)?;
        }
    }
    Ok(store)
}

/// Cross-validation over already prepared traces.
pub fn crossval_prepared(
    items: &[PreparedTrace],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    cfg.validate()?;
    if cfg.folds < 2 {
        return Err(EvalError::Invalid("at least two folds are required".into()));
    }
    if items.is_empty() {
        return Err(EvalError::Invalid("dataset is empty".into()));
    }
    let ids: Vec<String> = items.iter().map(|i| i.query_id.clone()).collect();
    let folds = assign_folds(&ids, cfg.folds, cfg.seed);
    let dimension = items[0].prepared.embedding.dim();
    let mut records = Vec::with_capacity(items.len() * cfg.strategies.len());
    for fold in 0..cfg.folds {
        let train: Vec<&PreparedTrace> = items.iter().zip(&folds).filter(|(_, f)| **f != fold).map(|(i, _)| i).collect();
        let test: Vec<&PreparedTrace> = items.iter().zip(&folds).filter(|(_, f)| **f == fold).map(|(i, _)| i).collect();
        let store = build_store(&train, dimension, &ctx.profile.agent_id, &cfg.noise())?;
        let jobs: Vec<(&PreparedTrace, Strategy)> = test
            .iter()
            .flat_map(|t| cfg.strategies.iter().map(move |s| (*t, *s)))
            .collect();
        let fold_records: Vec<EvalRecord> = jobs
            .par_iter()
            .map(|(t, s)| evaluate_one(t, *s, &store, ctx, cfg, fold))
            .collect::<Result<_, _>>()?;
        records.extend(fold_records);
    }
    records.sort_by(|a, b| (a.fold, &a.query_id, a.strategy).cmp(&(b.fold, &b.query_id, b.strategy)));
    Ok(records)
}

/// Prepares the dataset and runs k-fold cross-validation for every strategy.
pub fn run_crossval(
    dataset: &[WorkflowTrace],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    let items = prepare_dataset(dataset, ctx)?;
    crossval_prepared(&items, ctx, cfg)
}

/// One point of a learning curve for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ix: usize,
    pub strategy: Strategy,
    pub train_size: usize,
    /// Trailing-window mean of the answerable indicator.
    pub ansavg: f64,
    /// Trailing-window mean similarity over non-failed suggestions.
    pub simavg: f64,
}

/// Self-learning run: each query is scored against the examples of all
/// previous queries, then its own trace is ingested.
pub fn curve_prepared(
    items: &[PreparedTrace],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
    window: usize,
) -> Result<(Vec<EvalRecord>, Vec<CurvePoint>), EvalError> {
    cfg.validate()?;
    if window == 0 {
        return Err(EvalError::Invalid("window must be >= 1".into()));
    }
    if items.is_empty() {
        return Err(EvalError::Invalid("dataset is empty".into()));
    }
    // Random but seeded processing order.
    let mut order: Vec<&PreparedTrace> = items.iter().collect();
    order.sort_by(|a, b| {
        unit_hash(cfg.seed ^ 0x00c0_ffee, &a.query_id)
            .total_cmp(&unit_hash(cfg.seed ^ 0x00c0_ffee, &b.query_id))
            .then(a.query_id.cmp(&b.query_id))
    });
    let dimension = items[0].prepared.embedding.dim();
    let mut store = SimilarityStore::in_memory(dimension, &ctx.profile.agent_id)?;
    let noise = cfg.noise();
    let mut records = Vec::with_capacity(items.len() * cfg.strategies.len());
    for item in order {
        let step: Vec<EvalRecord> = cfg
            .strategies
            .par_iter()
            .map(|s| evaluate_one(item, *s, &store, ctx, cfg, 0))
            .collect::<Result<_, _>>()?;
        records.extend(step);
        if let Some(ex) = item.example(&noise) {
            store.insert(ex)?;
        }
    }
    let mut points = Vec::with_capacity(records.len());
    for strategy in &cfg.strategies {
        let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.strategy == *strategy).collect();
        for ix in 0..mine.len() {
            let lo = (ix + 1).saturating_sub(window);
            let win = &mine[lo..=ix];
            let ans = win.iter().filter(|r| r.is_answerable()).count() as f64 / win.len() as f64;
            let sims: Vec<f64> = win.iter().filter_map(|r| r.similarity).collect();
            let sim = if sims.is_empty() { 0.0 } else { sims.iter().sum::<f64>() / sims.len() as f64 };
            points.push(CurvePoint {
                ix,
                strategy: *strategy,
                train_size: mine[ix].train_size,
                ansavg: ans,
                simavg: sim,
            });
        }
    }
    Ok((records, points))
}

pub fn run_learning_curve(
    dataset: &[WorkflowTrace],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
    window: usize,
) -> Result<(Vec<EvalRecord>, Vec<CurvePoint>), EvalError> {
    let items = prepare_dataset(dataset, ctx)?;
    curve_prepared(&items, ctx, cfg, window)
}

/// First curve point of `strategy` whose train size reaches `train_size`.
pub fn curve_at(points: &[CurvePoint], strategy: Strategy, train_size: usize) -> Option<&CurvePoint> {
    points
        .iter()
        .find(|p| p.strategy == strategy && p.train_size >= train_size)
}

/// Per-strategy summary of a set of records, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub n: usize,
    pub answerable_pct: f64,
    pub no_knowledge_pct: f64,
    pub no_workflow_pct: f64,
    pub failed_pct: f64,
    /// Mean similarity over all non-failed suggestions, times 100.
    pub similarity_x100: f64,
    /// Mean similarity over answerable suggestions only, times 100.
    pub similarity_answerable_x100: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn aggregate(records: &[EvalRecord]) -> Vec<Aggregate> {
    let mut strategies: Vec<Strategy> = records.iter().map(|r| r.strategy).collect();
    strategies.sort();
    strategies.dedup();
    strategies
        .into_iter()
        .map(|s| {
            let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.strategy == s).collect();
            let n = mine.len();
            let pct = |f: &dyn Fn(&EvalRecord) -> bool| 100.0 * mine.iter().filter(|r| f(r)).count() as f64 / n as f64;
            let sims: Vec<f64> = mine.iter().filter_map(|r| r.similarity).collect();
            let ans_sims: Vec<f64> = mine.iter().filter(|r| r.is_answerable()).filter_map(|r| r.similarity).collect();
            Aggregate {
                strategy: s,
                n,
                answerable_pct: pct(&|r| r.suggested_category == Some(AnswerabilityCategory::Answerable)),
                no_knowledge_pct: pct(&|r| r.suggested_category == Some(AnswerabilityCategory::NoKnowledge)),
                no_workflow_pct: pct(&|r| r.suggested_category == Some(AnswerabilityCategory::NoWorkflow)),
                failed_pct: pct(&|r| r.suggested_category.is_none()),
                similarity_x100: 100.0 * mean(&sims),
                similarity_answerable_x100: 100.0 * mean(&ans_sims),
            }
        })
        .collect()
}

/// Mean and standard deviation across seeds of each aggregate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub strategy: Strategy,
    pub seeds: usize,
    pub mean: Aggregate,
    pub std: Aggregate,
}

pub fn summarize_seeds(per_seed: &[Vec<Aggregate>]) -> Vec<SeedSummary> {
    let mut strategies: Vec<Strategy> = per_seed.iter().flatten().map(|a| a.strategy).collect();
    strategies.sort();
    strategies.dedup();
    strategies
        .into_iter()
        .map(|s| {
            let rows: Vec<&Aggregate> = per_seed.iter().flatten().filter(|a| a.strategy == s).collect();
            let col = |f: fn(&Aggregate) -> f64| rows.iter().map(|a| f(a)).collect::<Vec<f64>>();
            let build = |g: fn(&[f64]) -> f64| Aggregate {
                strategy: s,
                n: rows.iter().map(|a| a.n).sum::<usize>() / rows.len().max(1),
                answerable_pct: g(&col(|a| a.answerable_pct)),
                no_knowledge_pct: g(&col(|a| a.no_knowledge_pct)),
                no_workflow_pct: g(&col(|a| a.no_workflow_pct)),
                failed_pct: g(&col(|a| a.failed_pct)),
                similarity_x100: g(&col(|a| a.similarity_x100)),
                similarity_answerable_x100: g(&col(|a| a.similarity_answerable_x100)),
            };
            SeedSummary {
                strategy: s,
                seeds: rows.len(),
                mean: build(mean),
                std: build(std_dev),
            }
        })
        .collect()
}

/// Aggregate of one threshold setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub theta_sim: f64,
    pub theta_div: f64,
    pub answerable_pct: f64,
    pub similarity_x100: f64,
    pub n: usize,
}

/// Cross-validates the dynamic strategy at every valid grid point.
pub fn sweep_thresholds(
    items: &[PreparedTrace],
    ctx: &EvalContext<'_>,
    base: &EvalConfig,
    grid: &[(f64, f64)],
) -> Result<Vec<SweepRow>, EvalError> {
    let mut out = Vec::new();
    for &(theta_sim, theta_div) in grid {
        let cfg = EvalConfig {
            retrieval: RetrievalConfig {
                theta_sim,
                theta_div,
                ..base.retrieval
            },
            strategies: vec![Strategy::DynamicFewShot],
            ..base.clone()
        };
        if let Err(e) = cfg.retrieval.validate() {
            tracing::warn!(theta_sim, theta_div, error = %e, "skipping grid point");
            continue;
        }
        let records = crossval_prepared(items, ctx, &cfg)?;
        let agg = aggregate(&records).into_iter().next().expect("one strategy");
        out.push(SweepRow {
            seed: base.seed,
            theta_sim,
            theta_div,
            answerable_pct: agg.answerable_pct,
            similarity_x100: agg.similarity_x100,
            n: agg.n,
        });
    }
    Ok(out)
}

/// Embeds fixed example templates into an example set.
pub fn embed_examples(
    examples: &[(TemplatedQuery, BinaryAnswerability, String)],
    provider: &dyn Provider,
) -> Result<ExampleSets, EvalError> {
    let mut sets = ExampleSets::default();
    for (i, (template, label, explanation)) in examples.iter().enumerate() {
        let ex = LabeledExample {
            id: format!("static-{i}"),
            template: template.clone(),
            embedding: embed_one(provider, &template.template_text)?,
            answerability: *label,
            explanation: explanation.clone(),
            created_at: chrono::DateTime::UNIX_EPOCH,
        };
        match label {
            BinaryAnswerability::Answerable => sets.positive.push(ex),
            BinaryAnswerability::NotAnswerable => sets.negative.push(ex),
        }
    }
    Ok(sets)
}

/// The scenario's static examples, embedded.
pub fn scenario_static_examples(scenario: &Scenario, provider: &dyn Provider) -> Result<ExampleSets, EvalError> {
    let list: Vec<_> = scenario
        .static_examples
        .iter()
        .map(|s| {
            (
                TemplatedQuery {
                    template_text: s.template.clone(),
                    bindings: vec![],
                    source_query: s.template.clone(),
                },
                s.answerability,
                s.explanation.clone(),
            )
        })
        .collect();
    embed_examples(&list, provider)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_eval_csv<W: Write>(records: &[EvalRecord], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "seed", "fold", "query_id", "strategy", "train_size", "outcome", "similarity", "query", "suggestion",
    ])?;
    for r in records {
        out.write_record([
            r.seed.to_string(),
            r.fold.to_string(),
            r.query_id.clone(),
            r.strategy.to_string(),
            r.train_size.to_string(),
            r.outcome().to_string(),
            r.similarity.map(fmt_f).unwrap_or_default(),
            r.query.clone(),
            r.suggestion.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `eval.csv` back; used to cross-check aggregates.
pub fn read_eval_csv<R: std::io::Read>(r: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let parse_usize = |i: usize| field(i).parse::<usize>().map_err(|e| EvalError::Invalid(e.to_string()));
        let outcome = field(5);
        out.push(EvalRecord {
            seed: field(0).parse().map_err(|e: std::num::ParseIntError| EvalError::Invalid(e.to_string()))?,
            fold: parse_usize(1)?,
            query_id: field(2),
            strategy: field(3).parse()?,
            train_size: parse_usize(4)?,
            suggested_category: if outcome == "failed" {
                None
            } else {
                Some(outcome.parse().map_err(|_| EvalError::Invalid(format!("bad outcome `{outcome}`")))?)
            },
            similarity: if field(6).is_empty() {
                None
            } else {
                Some(field(6).parse().map_err(|e: std::num::ParseFloatError| EvalError::Invalid(e.to_string()))?)
            },
            query: field(7),
            suggestion: field(8),
        });
    }
    Ok(out)
}

pub fn write_agg_csv<W: Write>(summaries: &[SeedSummary], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "strategy",
        "seeds",
        "n",
        "answerable_pct",
        "answerable_pct_std",
        "no_knowledge_pct",
        "no_knowledge_pct_std",
        "no_workflow_pct",
        "no_workflow_pct_std",
        "failed_pct",
        "failed_pct_std",
        "similarity_x100",
        "similarity_x100_std",
        "similarity_answerable_x100",
        "similarity_answerable_x100_std",
    ])?;
    for s in summaries {
        let (m, d) = (&s.mean, &s.std);
        out.write_record([
            s.strategy.to_string(),
            s.seeds.to_string(),
            m.n.to_string(),
            fmt_f(m.answerable_pct),
            fmt_f(d.answerable_pct),
            fmt_f(m.no_knowledge_pct),
            fmt_f(d.no_knowledge_pct),
            fmt_f(m.no_workflow_pct),
            fmt_f(d.no_workflow_pct),
            fmt_f(m.failed_pct),
            fmt_f(d.failed_pct),
            fmt_f(m.similarity_x100),
            fmt_f(d.similarity_x100),
            fmt_f(m.similarity_answerable_x100),
            fmt_f(d.similarity_answerable_x100),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `ix,ansavg,ansstd,simavg,simstd,strategy,train_size`, with mean and
/// standard deviation across the given per-seed curves.
pub fn write_curve_csv<W: Write>(per_seed: &[Vec<CurvePoint>], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ix", "ansavg", "ansstd", "simavg", "simstd", "strategy", "train_size"])?;
    let mut strategies: Vec<Strategy> = per_seed.iter().flatten().map(|p| p.strategy).collect();
    strategies.sort();
    strategies.dedup();
    for s in strategies {
        let curves: Vec<Vec<&CurvePoint>> = per_seed
            .iter()
            .map(|c| c.iter().filter(|p| p.strategy == s).collect())
            .collect();
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        for ix in 0..len {
            let ans: Vec<f64> = curves.iter().map(|c| c[ix].ansavg).collect();
            let sim: Vec<f64> = curves.iter().map(|c| c[ix].simavg).collect();
            let ts: Vec<f64> = curves.iter().map(|c| c[ix].train_size as f64).collect();
            out.write_record([
                ix.to_string(),
                fmt_f(mean(&ans)),
                fmt_f(std_dev(&ans)),
                fmt_f(mean(&sim)),
                fmt_f(std_dev(&sim)),
                s.to_string(),
                format!("{:.1}", mean(&ts)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["seed", "theta_sim", "theta_div", "n", "answerable_pct", "similarity_x100"])?;
    for r in rows {
        out.write_record([
            r.seed.to_string(),
            fmt_f(r.theta_sim),
            fmt_f(r.theta_div),
            r.n.to_string(),
            fmt_f(r.answerable_pct),
            fmt_f(r.similarity_x100),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `id,label,e0..e{d-1}` for every stored example.
pub fn export_embeddings<W: Write>(store: &SimilarityStore, w: W) -> Result<(), EvalError> {
    if store.is_empty() {
        return Err(EvalError::Invalid("store is empty".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..store.dimension()).map(|i| format!("e{i}")));
    out.write_record(&header)?;
    for ex in store.examples() {
        let mut row = vec![ex.id.clone(), ex.answerability.category_label().to_string()];
        // 17 significant digits round-trip an f64 exactly.
        row.extend(ex.embedding.as_slice().iter().map(|x| format!("{x:.17e}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
