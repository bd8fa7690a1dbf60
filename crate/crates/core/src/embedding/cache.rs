use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingVector};

/// Hex SHA-256 of raw image bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub id: String,
    pub sha256: String,
    pub vector: Vec<f64>,
}

/// Append-only JSON-lines cache, one file per provider, keyed by content hash.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, CacheRecord>>,
    writer: Mutex<()>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl EmbeddingCache {
    /// Opens (or prepares to create) the cache file for `provider_id` under `dir`.
    pub fn open(dir: impl AsRef<Path>, provider_id: &str) -> Result<Self, EmbeddingError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| EmbeddingError::Cache {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Self::open_file(dir.join(format!("{}.jsonl", sanitize(provider_id))))
    }

    pub fn open_file(path: PathBuf) -> Result<Self, EmbeddingError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let err = |message: String| EmbeddingError::Cache {
                path: path.display().to_string(),
                message,
            };
            let f = File::open(&path).map_err(|e| err(e.to_string()))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                entries.insert(rec.sha256.clone(), rec);
            }
        }
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, sha256: &str) -> Option<EmbeddingVector> {
        let entries = self.entries.lock().unwrap();
        entries.get(sha256).and_then(|r| EmbeddingVector::new(r.vector.clone()).ok())
    }

    /// Records a vector and appends it to disk.
    pub fn insert(&self, id: &str, sha256: &str, vector: &EmbeddingVector) -> Result<(), EmbeddingError> {
        let rec = CacheRecord {
            id: id.to_string(),
            sha256: sha256.to_string(),
            vector: vector.values().to_vec(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        {
            let _guard = self.writer.lock().unwrap();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| EmbeddingError::Cache {
                    path: self.path.display().to_string(),
                    message: e.to_string(),
                })?;
            writeln!(f, "{line}").map_err(|e| EmbeddingError::Cache {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        self.entries.lock().unwrap().insert(rec.sha256.clone(), rec);
        Ok(())
    }
}
