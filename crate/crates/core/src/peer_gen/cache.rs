use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::provider::LlmProvider;
use crate::error::{OdpcError, Result};
use crate::persist;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub prompt: String,
    pub response: Vec<String>,
}

/// Contents of `llm_cache.json`, keyed by `(prompt, provider id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCache {
    pub entries: BTreeMap<String, CacheEntry>,
}

impl LlmCache {
    fn key(provider: &str, prompt: &str) -> String {
        format!("{provider}\u{1f}{prompt}")
    }

    pub fn get(&self, provider: &str, prompt: &str) -> Option<&[String]> {
        self.entries.get(&Self::key(provider, prompt)).map(|e| e.response.as_slice())
    }

    pub fn insert(&mut self, provider: &str, prompt: &str, response: Vec<String>) {
        self.entries.insert(
            Self::key(provider, prompt),
            CacheEntry { provider: provider.into(), prompt: prompt.into(), response },
        );
    }

    /// Missing file yields an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        match persist::read_json(path) {
            Err(OdpcError::NotFound(_)) => Ok(Self::default()),
            other => other,
        }
    }
}

/// Wraps a provider with a response cache. In offline mode a remote provider
/// is never contacted; local providers still answer misses.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<LlmCache>,
    path: Option<PathBuf>,
    offline: bool,
}

impl<P: LlmProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: LlmCache, path: Option<PathBuf>, offline: bool) -> Self {
        Self { inner, cache: Mutex::new(cache), path, offline }
    }

    pub fn open(inner: P, path: impl Into<PathBuf>, offline: bool) -> Result<Self> {
        let path = path.into();
        let cache = LlmCache::load(&path)?;
        Ok(Self::new(inner, cache, Some(path), offline))
    }

    pub fn snapshot(&self) -> LlmCache {
        self.cache.lock().expect("cache lock").clone()
    }
}

impl<P: LlmProvider> LlmProvider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn is_remote(&self) -> bool {
        self.inner.is_remote()
    }

    fn request(&self, prompt: &str) -> Result<Vec<String>> {
        let id = self.inner.id();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&id, prompt) {
            return Ok(hit.to_vec());
        }
        if self.offline && self.inner.is_remote() {
            return Err(OdpcError::Offline(prompt.to_string()));
        }
        let response = self.inner.request(prompt)?;
        let mut cache = self.cache.lock().expect("cache lock");
        cache.insert(&id, prompt, response.clone());
        if let Some(path) = &self.path {
            persist::write_json(&*cache, path)?;
        }
        Ok(response)
    }
}
