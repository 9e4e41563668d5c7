//! Robust retrieval of dynamic few-shot examples.
//!
//! Admitted candidates (similarity to the query at least `theta_sim`) are
//! visited once, most similar first. Each one either seeds a new cluster
//! with counter 1 or votes on the most similar live cluster representative
//! when that similarity is at least `theta_div`: `+1` on agreeing labels,
//! `-1` otherwise. A counter that reaches zero kills its cluster for good.
//! Representatives of live clusters form the positive and negative sets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{dot, BinaryAnswerability, Embedding, LabeledExample};
use crate::store::{SimilarityStore, StoreError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: query has {query}, candidate has {candidate}")]
    DimensionMismatch { query: usize, candidate: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "defaults::theta_sim")]
    pub theta_sim: f64,
    #[serde(default = "defaults::theta_div")]
    pub theta_div: f64,
    #[serde(default = "defaults::cap")]
    pub max_positive: usize,
    #[serde(default = "defaults::cap")]
    pub max_negative: usize,
    /// Off disables the cluster vote: every admitted example is emitted (ablation).
    #[serde(default = "defaults::voting")]
    pub voting: bool,
}

mod defaults {
    pub fn theta_sim() -> f64 {
        0.60
    }
    pub fn theta_div() -> f64 {
        0.90
    }
    pub fn cap() -> usize {
        5
    }
    pub fn voting() -> bool {
        true
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            theta_sim: defaults::theta_sim(),
            theta_div: defaults::theta_div(),
            max_positive: defaults::cap(),
            max_negative: defaults::cap(),
            voting: true,
        }
    }
}

impl RetrievalConfig {
    pub fn new(theta_sim: f64, theta_div: f64) -> Result<Self, RetrievalError> {
        let cfg = RetrievalConfig {
            theta_sim,
            theta_div,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (name, v) in [("theta_sim", self.theta_sim), ("theta_div", self.theta_div)] {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(RetrievalError::InvalidConfig(format!("{name} = {v} outside [-1, 1]")));
            }
        }
        if self.theta_div < self.theta_sim {
            return Err(RetrievalError::InvalidConfig(format!(
                "theta_div ({}) must be >= theta_sim ({})",
                self.theta_div, self.theta_sim
            )));
        }
        Ok(())
    }
}

/// Final state of one cluster seeded during retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterVote {
    /// Position of the representative in the visit order.
    pub representative_index: usize,
    pub counter: i64,
    pub label: BinaryAnswerability,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSets {
    pub positive: Vec<LabeledExample>,
    pub negative: Vec<LabeledExample>,
}

impl ExampleSets {
    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }
}

/// Order in which admitted candidates are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisitOrder {
    /// Descending similarity to the query, ties by insertion order.
    #[default]
    Similarity,
    /// Seeded shuffle; only for measuring order sensitivity.
    Shuffled(u64),
}

/// Retrieval over a store snapshot.
pub fn retrieve_examples(
    query: &Embedding,
    store: &SimilarityStore,
    cfg: &RetrievalConfig,
) -> Result<ExampleSets, RetrievalError> {
    cfg.validate()?;
    let admitted = store.scan_scored(query, cfg.theta_sim)?;
    let cands: Vec<(&LabeledExample, f64)> = admitted.iter().map(|s| (s.example, s.similarity)).collect();
    Ok(vote(&cands, cfg, VisitOrder::Similarity).0)
}

/// Retrieval over an explicit candidate list (insertion order = slice order).
pub fn retrieve_from(
    query: &Embedding,
    candidates: &[LabeledExample],
    cfg: &RetrievalConfig,
    order: VisitOrder,
) -> Result<(ExampleSets, Vec<ClusterVote>), RetrievalError> {
    cfg.validate()?;
    let mut admitted: Vec<(&LabeledExample, f64)> = Vec::new();
    for c in candidates {
        if c.embedding.dim() != query.dim() {
            return Err(RetrievalError::DimensionMismatch {
                query: query.dim(),
                candidate: c.embedding.dim(),
            });
        }
        let s = dot(query.as_slice(), c.embedding.as_slice());
        if s >= cfg.theta_sim {
            admitted.push((c, s));
        }
    }
    admitted.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(vote(&admitted, cfg, order))
}

/// `admitted` must be sorted by descending similarity (stable on insertion order).
fn vote(
    admitted: &[(&LabeledExample, f64)],
    cfg: &RetrievalConfig,
    order: VisitOrder,
) -> (ExampleSets, Vec<ClusterVote>) {
    let mut visit: Vec<usize> = (0..admitted.len()).collect();
    if let VisitOrder::Shuffled(seed) = order {
        visit.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let mut counters = vec![0i64; admitted.len()];
    let mut seeded = vec![false; admitted.len()];
    let mut clusters: Vec<ClusterVote> = Vec::new();
    if cfg.voting {
        // Live representatives, in visit order (so argmax ties pick the lowest).
        let mut live: Vec<usize> = Vec::new();
        for (pos, &i) in visit.iter().enumerate() {
            let (ex, _) = admitted[i];
            let e = ex.embedding.as_slice();
            let mut best: Option<(usize, f64)> = None;
            for (slot, &j) in live.iter().enumerate() {
                let s = dot(e, admitted[visit[j]].0.embedding.as_slice());
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((slot, s));
                }
            }
            match best {
                Some((slot, s)) if s >= cfg.theta_div => {
                    let j = visit[live[slot]];
                    if admitted[j].0.answerability == ex.answerability {
                        counters[j] += 1;
                    } else {
                        counters[j] -= 1;
                        if counters[j] == 0 {
                            live.remove(slot);
                        }
                    }
                }
                _ => {
                    counters[i] = 1;
                    seeded[i] = true;
                    live.push(pos);
                }
            }
        }
        for (pos, &i) in visit.iter().enumerate() {
            if seeded[i] {
                clusters.push(ClusterVote {
                    representative_index: pos,
                    counter: counters[i],
                    label: admitted[i].0.answerability,
                });
            }
        }
    } else {
        counters.iter_mut().for_each(|c| *c = 1);
    }

    let mut sets = ExampleSets::default();
    for (i, (ex, _)) in admitted.iter().enumerate() {
        if counters[i] <= 0 {
            continue;
        }
        match ex.answerability {
            BinaryAnswerability::Answerable if sets.positive.len() < cfg.max_positive => {
                sets.positive.push((*ex).clone())
            }
            BinaryAnswerability::NotAnswerable if sets.negative.len() < cfg.max_negative => {
                sets.negative.push((*ex).clone())
            }
            _ => {}
        }
    }
    (sets, clusters)
}
