//! The online pipeline: label a trace, learn from it, suggest alternatives.
//!
//! One [`Engine`] serves every configured agent. Each agent owns a store
//! behind a read/write lock: retrieval takes the read side, ingestion the
//! write side, and all provider calls happen outside the lock.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError, ProviderKind};
use crate::domain::{AnswerabilityCategory, AnswerabilityVerdict, LabeledExample, WorkflowTrace};
use crate::generation::{suggest, GenerationError, GenerationMode, Suggestion, SuggestionRequest};
use crate::labeling::{evaluate_answerability, prepare, to_example, LabelingError};
use crate::prompts::PromptSet;
use crate::providers::{EmbeddingCache, HttpProvider, Provider, ProviderError, SimProvider};
use crate::retrieval::{retrieve_examples, RetrievalConfig};
use crate::simulation::{Scenario, ScenarioModel};
use crate::store::{SimilarityStore, StoreError};
use crate::templating::{AgentProfile, TemplatingError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{0}")]
    Validation(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("provider failure: {source}")]
    Provider {
        #[source]
        source: ProviderError,
    },
    #[error("model output could not be used: {0}")]
    ModelOutput(String),
    #[error("suggestion generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
}

impl EngineError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EngineError::Provider { source } if source.is_retryable())
    }

    /// True for failures caused by the caller's input or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EngineError::Validation(_) | EngineError::UnknownAgent(_) | EngineError::Config(_)
        )
    }
}

impl From<ProviderError> for EngineError {
    fn from(source: ProviderError) -> Self {
        match source {
            ProviderError::InvalidRequest(m) => EngineError::Validation(m),
            source => EngineError::Provider { source },
        }
    }
}

impl From<TemplatingError> for EngineError {
    fn from(e: TemplatingError) -> Self {
        match e {
            TemplatingError::EmptyQuery => EngineError::Validation(e.to_string()),
            TemplatingError::Provider(p) => p.into(),
            other => EngineError::ModelOutput(other.to_string()),
        }
    }
}

impl From<LabelingError> for EngineError {
    fn from(e: LabelingError) -> Self {
        match e {
            LabelingError::MissingResponse => EngineError::Validation(e.to_string()),
            LabelingError::Provider(p) => p.into(),
            LabelingError::Templating(t) => t.into(),
            LabelingError::Store(s) => s.into(),
            other => EngineError::ModelOutput(other.to_string()),
        }
    }
}

impl From<GenerationError> for EngineError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::InvalidRequest(m) => EngineError::Validation(m),
            GenerationError::Provider(p) => p.into(),
            other => EngineError::Generation(other.to_string()),
        }
    }
}

pub struct AgentState {
    pub profile: AgentProfile,
    store: RwLock<SimilarityStore>,
}

impl AgentState {
    pub fn new(profile: AgentProfile, store: SimilarityStore) -> Self {
        AgentState {
            profile,
            store: RwLock::new(store),
        }
    }

    pub fn store_len(&self) -> usize {
        self.read().len()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, SimilarityStore> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, SimilarityStore> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }
}

/// Result of one labeling + learning + suggestion round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessOutcome {
    pub agent_id: String,
    pub verdict: AnswerabilityVerdict,
    pub template: String,
    /// Id of the stored example; absent for no-knowledge traces.
    pub ingested_id: Option<String>,
    pub suggestions: Vec<Suggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub agent_id: String,
    pub verdict: AnswerabilityVerdict,
    pub ingested_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePage {
    pub agent_id: String,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
    pub examples: Vec<LabeledExample>,
}

pub struct Engine {
    provider: Arc<dyn Provider>,
    prompts: PromptSet,
    retrieval: RetrievalConfig,
    mode: GenerationMode,
    num_suggestions: usize,
    agents: BTreeMap<String, AgentState>,
}

/// Overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub provider: Option<ProviderKind>,
    pub store_dir: Option<PathBuf>,
}

impl Engine {
    pub fn new(
        provider: Arc<dyn Provider>,
        prompts: PromptSet,
        retrieval: RetrievalConfig,
        agents: Vec<AgentState>,
    ) -> Result<Self, EngineError> {
        retrieval
            .validate()
            .map_err(|e| EngineError::Validation(e.to_string()))?;
        let mut map = BTreeMap::new();
        for a in agents {
            let id = a.profile.agent_id.clone();
            if map.insert(id.clone(), a).is_some() {
                return Err(EngineError::Validation(format!("agent `{id}` configured twice")));
            }
        }
        Ok(Engine {
            provider,
            prompts,
            retrieval,
            mode: GenerationMode::default(),
            num_suggestions: SuggestionRequest::DEFAULT_NUM_SUGGESTIONS,
            agents: map,
        })
    }

    pub fn with_generation(mut self, mode: GenerationMode, num_suggestions: usize) -> Self {
        self.mode = mode;
        self.num_suggestions = num_suggestions.max(1);
        self
    }

    /// Builds provider, prompts, profiles and stores from a config.
    ///
    /// With the simulator provider the scenario's agent is registered
    /// automatically, using the scenario profile unless one is configured.
    pub fn from_config(cfg: &Config, opts: &EngineOptions) -> Result<Self, EngineError> {
        let kind = opts.provider.unwrap_or(cfg.provider.kind);
        let prompts = match &cfg.generation.prompts_dir {
            Some(dir) => PromptSet::load(dir).map_err(|e| EngineError::Setup(e.to_string()))?,
            None => PromptSet::default(),
        };
        let mut profiles: BTreeMap<String, AgentProfile> = BTreeMap::new();
        for (id, section) in &cfg.agents {
            if let Some(path) = &section.profile {
                let p = AgentProfile::load(path).map_err(|e| EngineError::Setup(e.to_string()))?;
                if &p.agent_id != id {
                    return Err(EngineError::Validation(format!(
                        "profile {} declares agent `{}` under [agents.{id}]",
                        path.display(),
                        p.agent_id
                    )));
                }
                profiles.insert(id.clone(), p);
            }
        }
        let (provider, dimension): (Arc<dyn Provider>, usize) = match kind {
            ProviderKind::Sim => {
                let scenario = Arc::new(load_scenario(cfg)?);
                profiles
                    .entry(scenario.profile.agent_id.clone())
                    .or_insert_with(|| scenario.profile.clone());
                let dim = cfg.provider.sim_dimension;
                (Arc::new(SimProvider::new(dim, ScenarioModel::new(scenario))), dim)
            }
            ProviderKind::Http => {
                let (http, dim) = cfg.http_settings()?;
                let cache = match &cfg.provider.embedding_cache {
                    Some(p) => EmbeddingCache::open(p)?,
                    None => EmbeddingCache::in_memory(),
                };
                (Arc::new(HttpProvider::new(http.clone(), cache)?), dim)
            }
        };
        for id in cfg.agents.keys() {
            if !profiles.contains_key(id) {
                return Err(EngineError::Validation(format!("agent `{id}` has no profile")));
            }
        }
        let store_dir = opts.store_dir.clone().or_else(|| cfg.store.dir.clone());
        let mut agents = Vec::new();
        for (id, profile) in profiles {
            let store = match &store_dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
                        path: dir.clone(),
                        source,
                    })?;
                    SimilarityStore::open(dir.join(format!("{id}.jsonl")), dimension, &id, cfg.store.durable)?
                }
                None => SimilarityStore::in_memory(dimension, &id)?,
            };
            agents.push(AgentState::new(profile, store));
        }
        Ok(Engine::new(provider, prompts, cfg.retrieval, agents)?
            .with_generation(cfg.generation.mode, cfg.generation.num_suggestions))
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider.as_ref()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }

    pub fn agent(&self, id: &str) -> Result<&AgentState, EngineError> {
        self.agents
            .get(id)
            .ok_or_else(|| EngineError::UnknownAgent(id.to_string()))
    }

    /// Labels the trace, stores it when eligible, and suggests alternatives
    /// for unanswered queries. Examples are retrieved before the trace itself
    /// is stored, so a query never serves as its own example.
    pub fn process(
        &self,
        trace: &WorkflowTrace,
        num_suggestions: Option<usize>,
        verbose: bool,
    ) -> Result<ProcessOutcome, EngineError> {
        let agent = self.agent(&trace.agent_id)?;
        let n = num_suggestions.unwrap_or(self.num_suggestions);
        if n == 0 {
            return Err(EngineError::Validation("num_suggestions must be >= 1".into()));
        }
        let p = self.provider.as_ref();
        let verdict = evaluate_answerability(trace, &agent.profile, p, &self.prompts)?;
        let prepared = prepare(&trace.query, &agent.profile, p, &self.prompts)?;
        let examples = if verdict.category == AnswerabilityCategory::Answerable {
            None
        } else {
            Some(retrieve_examples(&prepared.embedding, &agent.read(), &self.retrieval).map_err(|e| EngineError::Validation(e.to_string()))?)
        };
        let ingested_id = match to_example(&verdict, &prepared) {
            Some(ex) => Some(agent.write().insert(ex)?),
            None => None,
        };
        let mut outcome = ProcessOutcome {
            agent_id: trace.agent_id.clone(),
            verdict: verdict.clone(),
            template: prepared.template.template_text.clone(),
            ingested_id,
            suggestions: Vec::new(),
            prompt_transcript: None,
        };
        if let Some(examples) = examples {
            let req = SuggestionRequest::new(prepared.template, trace.clone(), verdict, examples, n)?;
            let result = suggest(&req, &agent.profile, p, &self.prompts, self.mode)?;
            outcome.suggestions = result.suggestions;
            if verbose {
                outcome.prompt_transcript = Some(result.prompt_transcript);
            }
        }
        Ok(outcome)
    }

    /// Labels and stores a trace without suggesting.
    pub fn ingest(&self, trace: &WorkflowTrace) -> Result<IngestSummary, EngineError> {
        let agent = self.agent(&trace.agent_id)?;
        let p = self.provider.as_ref();
        let verdict = evaluate_answerability(trace, &agent.profile, p, &self.prompts)?;
        let prepared = prepare(&trace.query, &agent.profile, p, &self.prompts)?;
        let ingested_id = match to_example(&verdict, &prepared) {
            Some(ex) => Some(agent.write().insert(ex)?),
            None => None,
        };
        Ok(IngestSummary {
            agent_id: trace.agent_id.clone(),
            verdict,
            ingested_id,
        })
    }

    /// One page (zero-based) of an agent's stored examples.
    pub fn examples(&self, agent_id: &str, page: usize, page_size: usize) -> Result<ExamplePage, EngineError> {
        if page_size == 0 || page_size > 1000 {
            return Err(EngineError::Validation("page_size must be in 1..=1000".into()));
        }
        let agent = self.agent(agent_id)?;
        let store = agent.read();
        let total = store.len();
        let examples = store
            .examples()
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .cloned()
            .collect();
        Ok(ExamplePage {
            agent_id: agent_id.to_string(),
            total,
            page,
            page_size,
            pages: total.div_ceil(page_size),
            examples,
        })
    }

    /// Runs `f` with shared access to an agent's store.
    pub fn with_store<T>(&self, agent_id: &str, f: impl FnOnce(&SimilarityStore) -> T) -> Result<T, EngineError> {
        Ok(f(&self.agent(agent_id)?.read()))
    }
}

/// The configured scenario, or the bundled one.
pub fn load_scenario(cfg: &Config) -> Result<Scenario, EngineError> {
    let sc = match &cfg.simulation.scenario {
        Some(p) => Scenario::load(p).map_err(|e| EngineError::Setup(e.to_string()))?,
        None => Scenario::invoices(),
    };
    Ok(if cfg.simulation.without_python {
        sc.with_capability("python", false)
    } else {
        sc
    })
}
