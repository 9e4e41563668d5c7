//! Similarity store: labeled template embeddings with exact cosine search.
//!
//! Persistence is an append-only JSON-lines journal. The first line is a
//! meta record; later lines are `example` or `tombstone` records. Opening a
//! journal replays it and rewrites it compacted.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{dot, BinaryAnswerability, Embedding, LabeledExample};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("no example with id `{0}`")]
    NotFound(String),
    #[error("store dimension must be positive")]
    ZeroDimension,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}: journal is for {found}, expected {expected}")]
    MetaMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Meta {
        format_version: String,
        dimension: usize,
        agent_id: String,
    },
    Example {
        example: LabeledExample,
    },
    Tombstone {
        id: String,
    },
}

struct Journal {
    path: PathBuf,
    file: File,
    durable: bool,
}

impl Journal {
    fn append(&mut self, rec: &Record) -> Result<(), StoreError> {
        let line = serde_json::to_string(rec).expect("records serialize");
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        writeln!(self.file, "{line}").map_err(io)?;
        if self.durable {
            self.file.sync_data().map_err(io)?;
        }
        Ok(())
    }
}

/// A scan hit: position in insertion order plus its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored<'a> {
    pub index: usize,
    pub similarity: f64,
    pub example: &'a LabeledExample,
}

pub struct SimilarityStore {
    dimension: usize,
    agent_id: String,
    examples: Vec<LabeledExample>,
    // Row-major copy of the embeddings for the scan loop.
    matrix: Vec<f64>,
    ids: HashMap<String, usize>,
    journal: Option<Journal>,
}

impl std::fmt::Debug for SimilarityStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimilarityStore")
            .field("agent_id", &self.agent_id)
            .field("dimension", &self.dimension)
            .field("len", &self.examples.len())
            .finish()
    }
}

impl SimilarityStore {
    pub fn in_memory(dimension: usize, agent_id: impl Into<String>) -> Result<Self, StoreError> {
        if dimension == 0 {
            return Err(StoreError::ZeroDimension);
        }
        Ok(SimilarityStore {
            dimension,
            agent_id: agent_id.into(),
            examples: Vec::new(),
            matrix: Vec::new(),
            ids: HashMap::new(),
            journal: None,
        })
    }

    /// Opens (or creates) a journal-backed store. With `durable`, every
    /// insert is synced to disk before it returns.
    pub fn open(
        path: impl AsRef<Path>,
        dimension: usize,
        agent_id: impl Into<String>,
        durable: bool,
    ) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = SimilarityStore::in_memory(dimension, agent_id)?;
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if path.exists() {
            store.replay(&path)?;
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        // Compaction: write live records to a sibling file, then rename over.
        let tmp = path.with_extension("jsonl.compact");
        {
            let f = File::create(&tmp).map_err(io)?;
            let mut w = BufWriter::new(f);
            let meta = Record::Meta {
                format_version: FORMAT_VERSION.into(),
                dimension,
                agent_id: store.agent_id.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&meta).expect("serializable")).map_err(io)?;
            for ex in &store.examples {
                let rec = Record::Example { example: ex.clone() };
                writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable")).map_err(io)?;
            }
            let f = w.into_inner().map_err(|e| io(e.into_error()))?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, &path).map_err(io)?;
        let file = OpenOptions::new().append(true).open(&path).map_err(io)?;
        store.journal = Some(Journal {
            path,
            file,
            durable,
        });
        Ok(store)
    }

    fn replay(&mut self, path: &Path) -> Result<(), StoreError> {
        let corrupt = |line: usize, detail: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let file = File::open(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut live: Vec<Option<LabeledExample>> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut saw_meta = false;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| corrupt(n + 1, e.to_string()))?;
            match rec {
                Record::Meta {
                    format_version,
                    dimension,
                    agent_id,
                } => {
                    if format_version != FORMAT_VERSION {
                        return Err(corrupt(n + 1, format!("unsupported format version {format_version}")));
                    }
                    if dimension != self.dimension || agent_id != self.agent_id {
                        return Err(StoreError::MetaMismatch {
                            path: path.to_path_buf(),
                            expected: format!("agent {} dimension {}", self.agent_id, self.dimension),
                            found: format!("agent {agent_id} dimension {dimension}"),
                        });
                    }
                    saw_meta = true;
                }
                Record::Example { example } => {
                    if !saw_meta {
                        return Err(corrupt(n + 1, "example before meta record".into()));
                    }
                    if example.embedding.dim() != self.dimension {
                        return Err(corrupt(n + 1, "embedding dimension differs from meta".into()));
                    }
                    if pos.contains_key(&example.id) {
                        return Err(corrupt(n + 1, format!("duplicate id {}", example.id)));
                    }
                    pos.insert(example.id.clone(), live.len());
                    live.push(Some(example));
                }
                Record::Tombstone { id } => {
                    if let Some(i) = pos.remove(&id) {
                        live[i] = None;
                    }
                }
            }
        }
        for ex in live.into_iter().flatten() {
            self.push(ex);
        }
        Ok(())
    }

    fn push(&mut self, ex: LabeledExample) {
        self.matrix.extend_from_slice(ex.embedding.as_slice());
        self.ids.insert(ex.id.clone(), self.examples.len());
        self.examples.push(ex);
    }

    fn rebuild(&mut self) {
        self.matrix.clear();
        self.ids.clear();
        for (i, ex) in self.examples.iter().enumerate() {
            self.matrix.extend_from_slice(ex.embedding.as_slice());
            self.ids.insert(ex.id.clone(), i);
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path.as_path())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples in insertion order.
    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.ids.get(id).map(|&i| &self.examples[i])
    }

    pub fn count(&self, label: BinaryAnswerability) -> usize {
        self.examples.iter().filter(|e| e.answerability == label).count()
    }

    pub fn insert(&mut self, example: LabeledExample) -> Result<String, StoreError> {
        if example.embedding.dim() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got: example.embedding.dim(),
            });
        }
        if self.ids.contains_key(&example.id) {
            return Err(StoreError::DuplicateId(example.id));
        }
        if let Some(j) = &mut self.journal {
            j.append(&Record::Example {
                example: example.clone(),
            })?;
        }
        let id = example.id.clone();
        self.push(example);
        Ok(id)
    }

    pub fn remove(&mut self, id: &str) -> Result<LabeledExample, StoreError> {
        let i = *self.ids.get(id).ok_or_else(|| StoreError::NotFound(id.into()))?;
        if let Some(j) = &mut self.journal {
            j.append(&Record::Tombstone { id: id.into() })?;
        }
        let ex = self.examples.remove(i);
        self.rebuild();
        Ok(ex)
    }

    fn check_dim(&self, query: &Embedding) -> Result<(), StoreError> {
        if query.dim() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got: query.dim(),
            });
        }
        Ok(())
    }

    /// Similarity of every example to `query`, in insertion order.
    pub fn similarities(&self, query: &Embedding) -> Result<Vec<f64>, StoreError> {
        self.check_dim(query)?;
        let q = query.as_slice();
        Ok(self.matrix.chunks_exact(self.dimension).map(|row| dot(row, q)).collect())
    }

    /// Examples with similarity `>= threshold`, most similar first; ties keep insertion order.
    pub fn scan_scored(&self, query: &Embedding, threshold: f64) -> Result<Vec<Scored<'_>>, StoreError> {
        let sims = self.similarities(query)?;
        let mut hits: Vec<Scored<'_>> = sims
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s >= threshold)
            .map(|(index, similarity)| Scored {
                index,
                similarity,
                example: &self.examples[index],
            })
            .collect();
        // Stable sort keeps ascending index among equal similarities.
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        Ok(hits)
    }

    pub fn scan_above(&self, query: &Embedding, threshold: f64) -> Result<Vec<&LabeledExample>, StoreError> {
        Ok(self
            .scan_scored(query, threshold)?
            .into_iter()
            .map(|s| s.example)
            .collect())
    }

    /// Up to `k` most similar examples.
    pub fn nearest(&self, query: &Embedding, k: usize) -> Result<Vec<Scored<'_>>, StoreError> {
        let mut all = self.scan_scored(query, f64::NEG_INFINITY)?;
        all.truncate(k);
        Ok(all)
    }
}
