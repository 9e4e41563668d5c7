//! TOML configuration shared by the CLI and the service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::{GenerationMode, SuggestionRequest};
use crate::providers::ProviderConfig;
use crate::retrieval::RetrievalConfig;

/// Environment variable that overrides `provider.http.api_key`.
pub const API_KEY_ENV: &str = "QSUGGEST_API_KEY";
/// Environment variable holding the optional service bearer token.
pub const BEARER_TOKEN_ENV: &str = "QSUGGEST_BEARER_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    #[default]
    Sim,
}

impl FromStr for ProviderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(ProviderKind::Http),
            "sim" => Ok(ProviderKind::Sim),
            other => Err(ConfigError::Invalid(format!("unknown provider `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    #[serde(default)]
    pub kind: ProviderKind,
    /// Embedding dimension of the simulator.
    #[serde(default = "default_sim_dimension")]
    pub sim_dimension: usize,
    /// Embedding dimension reported by the HTTP endpoint; sizes the stores.
    pub http_dimension: Option<usize>,
    pub http: Option<ProviderConfig>,
    /// On-disk embedding cache for the HTTP provider.
    pub embedding_cache: Option<PathBuf>,
}

fn default_sim_dimension() -> usize {
    256
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::Sim,
            sim_dimension: default_sim_dimension(),
            http_dimension: None,
            http: None,
            embedding_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    /// Directory holding one `<agent_id>.jsonl` journal per agent. In-memory when unset.
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub durable: bool,
}

impl StoreSection {
    pub fn path_for(&self, agent_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{agent_id}.jsonl")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default)]
    pub mode: GenerationMode,
    #[serde(default = "default_num_suggestions")]
    pub num_suggestions: usize,
    /// Directory overriding the bundled prompt templates.
    pub prompts_dir: Option<PathBuf>,
}

fn default_num_suggestions() -> usize {
    SuggestionRequest::DEFAULT_NUM_SUGGESTIONS
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            mode: GenerationMode::default(),
            num_suggestions: default_num_suggestions(),
            prompts_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Scenario file; the bundled invoice scenario when unset.
    pub scenario: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub noise_rate: f64,
    /// Disables the python tool of the scenario.
    #[serde(default)]
    pub without_python: bool,
}

fn default_n() -> usize {
    2000
}
fn default_folds() -> usize {
    5
}
fn default_window() -> usize {
    50
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            scenario: None,
            n: default_n(),
            folds: default_folds(),
            window: default_window(),
            noise_rate: 0.0,
            without_python: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Agent profile file (JSON or TOML). Simulator agents may omit it.
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub agents: BTreeMap<String, AgentSection>,
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        // Relative paths are resolved against the config file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.store.dir.as_mut().map(fix);
        cfg.generation.prompts_dir.as_mut().map(fix);
        cfg.simulation.scenario.as_mut().map(fix);
        cfg.provider.embedding_cache.as_mut().map(fix);
        for agent in cfg.agents.values_mut() {
            agent.profile.as_mut().map(fix);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and applies the API key environment override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        if let (Ok(key), Some(http)) = (std::env::var(API_KEY_ENV), cfg.provider.http.as_mut()) {
            http.api_key = key;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.generation.num_suggestions == 0 {
            return Err(ConfigError::Invalid("generation.num_suggestions must be >= 1".into()));
        }
        if self.provider.sim_dimension == 0 {
            return Err(ConfigError::Invalid("provider.sim_dimension must be >= 1".into()));
        }
        let s = &self.simulation;
        if s.n == 0 || s.folds < 2 || s.window == 0 {
            return Err(ConfigError::Invalid(
                "simulation needs n >= 1, folds >= 2 and window >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s.noise_rate) {
            return Err(ConfigError::Invalid("simulation.noise_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Checks the sections the HTTP provider needs.
    pub fn http_settings(&self) -> Result<(&ProviderConfig, usize), ConfigError> {
        let http = self
            .provider
            .http
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("[provider.http] is required for the http provider".into()))?;
        let dim = self
            .provider
            .http_dimension
            .filter(|d| *d > 0)
            .ok_or_else(|| ConfigError::Invalid("provider.http_dimension is required for the http provider".into()))?;
        Ok((http, dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_relative_paths() {
        let cfg = Config::parse("[store]\ndir = \"stores\"\n[agents.a]\nprofile = \"a.toml\"\n", Path::new("/etc/q/c.toml")).unwrap();
        assert_eq!(cfg.provider.kind, ProviderKind::Sim);
        assert_eq!(cfg.store.path_for("a").unwrap(), Path::new("/etc/q/stores/a.jsonl"));
        assert_eq!(cfg.agents["a"].profile.as_deref(), Some(Path::new("/etc/q/a.toml")));
    }

    #[test]
    fn rejects_bad_thresholds_and_unknown_keys() {
        let p = Path::new("c.toml");
        assert!(Config::parse("[retrieval]\ntheta_sim = 0.9\ntheta_div = 0.5\n", p).is_err());
        assert!(Config::parse("[retrieval]\nbogus = 1\n", p).is_err());
        assert!(Config::parse("[provider]\nkind = \"http\"\n", p).unwrap().http_settings().is_err());
    }
}
