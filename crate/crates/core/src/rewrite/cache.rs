//! Content-addressed rewrite cache: one JSONL file per feature dimension,
//! append-only, loaded into memory on open.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{RewriteError, RewritePair};
use crate::model::FeatureDimension;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    pair: RewritePair,
}

/// Persistent rewrite cache for a single process. `put` serializes through a
/// mutex, so concurrent workers see read-modify-write per key as atomic.
pub struct RewriteCache {
    dir: PathBuf,
    entries: Mutex<BTreeMap<(FeatureDimension, String), RewritePair>>,
}

impl RewriteCache {
    /// Open (or create) a cache directory and load all existing entries.
    pub fn open(dir: &Path) -> Result<RewriteCache, RewriteError> {
        fs::create_dir_all(dir)?;
        let mut entries = BTreeMap::new();
        for dimension in FeatureDimension::ALL {
            let path = Self::file_for(dir, dimension);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let parsed: CacheLine =
                    serde_json::from_str(line).map_err(|e| RewriteError::CacheCorrupt {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                entries.insert((dimension, parsed.key), parsed.pair);
            }
        }
        Ok(RewriteCache {
            dir: dir.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    fn file_for(dir: &Path, dimension: FeatureDimension) -> PathBuf {
        dir.join(format!("{dimension}.jsonl"))
    }

    pub fn get(&self, dimension: FeatureDimension, key: &str) -> Option<RewritePair> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(&(dimension, key.to_string()))
            .cloned()
    }

    /// Insert a pair unless the key is already present; the first write wins
    /// and is the one returned. Appends one line to the dimension's file.
    pub fn put(
        &self,
        dimension: FeatureDimension,
        key: &str,
        pair: RewritePair,
    ) -> Result<RewritePair, RewriteError> {
        let mut entries = self.entries.lock().expect("cache lock");
        if let Some(existing) = entries.get(&(dimension, key.to_string())) {
            return Ok(existing.clone());
        }
        let line = CacheLine {
            key: key.to_string(),
            pair: pair.clone(),
        };
        let mut buf = serde_json::to_vec(&line).expect("cache line serializes");
        buf.push(b'\n');
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(Self::file_for(&self.dir, dimension))?;
        file.write_all(&buf)?;
        entries.insert((dimension, key.to_string()), pair.clone());
        Ok(pair)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
