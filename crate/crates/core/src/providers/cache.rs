use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::ProviderError;
use crate::domain::Embedding;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CacheRecord {
    Meta { format_version: String, content: String },
    Embedding { model: String, text: String, embedding: Embedding },
}

/// Read-through embedding cache keyed by `(model, text)`.
///
/// Optionally backed by a JSON-lines file; concurrent readers share the map
/// while appends go through a single writer.
pub struct EmbeddingCache {
    map: RwLock<HashMap<(String, String), Embedding>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            map: RwLock::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| ProviderError::Cache(format!("{}: {e}", path.display()));
        let mut map = HashMap::new();
        let exists = path.exists();
        if exists {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    ProviderError::Cache(format!("{} line {}: {e}", path.display(), n + 1))
                })?;
                if let CacheRecord::Embedding { model, text, embedding } = rec {
                    map.insert((model, text), embedding);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if !exists {
            let meta = CacheRecord::Meta {
                format_version: "1".into(),
                content: "embedding_cache".into(),
            };
            writeln!(file, "{}", serde_json::to_string(&meta).expect("serializable")).map_err(io)?;
        }
        Ok(EmbeddingCache {
            map: RwLock::new(map),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn get(&self, model: &str, text: &str) -> Option<Embedding> {
        self.map
            .read()
            .expect("cache lock")
            .get(&(model.to_string(), text.to_string()))
            .cloned()
    }

    pub fn put(&self, model: &str, text: &str, embedding: Embedding) -> Result<(), ProviderError> {
        let key = (model.to_string(), text.to_string());
        {
            let mut map = self.map.write().expect("cache lock");
            if map.contains_key(&key) {
                return Ok(());
            }
            map.insert(key, embedding.clone());
        }
        if let Some(file) = &self.file {
            let rec = CacheRecord::Embedding {
                model: model.into(),
                text: text.into(),
                embedding,
            };
            let line = serde_json::to_string(&rec).expect("serializable");
            let mut f = file.lock().expect("cache writer");
            writeln!(f, "{line}").map_err(|e| {
                ProviderError::Cache(format!("{}: {e}", self.path.as_ref().unwrap().display()))
            })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let e = Embedding::new(vec![0.6, 0.8]).unwrap();
        {
            let cache = EmbeddingCache::open(&path).unwrap();
            cache.put("m", "hello", e.clone()).unwrap();
            cache.put("m", "hello", e.clone()).unwrap();
        }
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("m", "hello"), Some(e));
        assert_eq!(cache.get("other", "hello"), None);
    }
}
