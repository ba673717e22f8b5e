use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ProbeError};

/// Hex SHA-256 over model, prompt messages, temperature and token budget.
pub fn cache_key(request: &ChatRequest) -> String {
    let material = serde_json::to_string(&(
        &request.model,
        &request.system,
        &request.user,
        request.temperature.to_bits(),
        request.max_tokens,
    ))
    .expect("key material serializes");
    hex::encode(Sha256::digest(material.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    reply: String,
    timestamp: u64,
}

/// Append-only JSONL response log.
pub struct ResponseCache {
    path: Option<PathBuf>,
    replies: Mutex<HashMap<String, String>>,
    log: Option<Mutex<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            replies: Mutex::new(HashMap::new()),
            log: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self, ProbeError> {
        let io = |source| ProbeError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut replies = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path).map_err(io)?).lines() {
                let line = line.map_err(io)?;
                if let Ok(e) = serde_json::from_str::<Entry>(&line) {
                    replies.insert(e.key, e.reply);
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            replies: Mutex::new(replies),
            log: Some(Mutex::new(log)),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.replies.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: &str, reply: &str) -> Result<(), ProbeError> {
        self.replies
            .lock()
            .unwrap()
            .insert(key.to_string(), reply.to_string());
        if let Some(log) = &self.log {
            let timestamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or_default();
            let mut line = serde_json::to_string(&Entry {
                key: key.to_string(),
                reply: reply.to_string(),
                timestamp,
            })
            .expect("cache entry serializes");
            line.push('\n');
            log.lock()
                .unwrap()
                .write_all(line.as_bytes())
                .map_err(|source| ProbeError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.replies.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves cached replies and records fresh ones.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
    misses: AtomicUsize,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend {
            inner,
            cache,
            misses: AtomicUsize::new(0),
        }
    }

    /// Requests forwarded to the inner backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        let key = cache_key(request);
        if let Some(reply) = self.cache.get(&key) {
            return Ok(reply);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let reply = self.inner.complete(request)?;
        self.cache.insert(&key, &reply)?;
        Ok(reply)
    }
}
