//! Peer-class generation: prompts an LLM for labels that resemble each
//! in-distribution class without belonging to the ID label set, and renders
//! textual descriptions for every label.

mod cache;
mod provider;

use std::collections::HashSet;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OdpcError, Result};
use crate::persist;

pub use cache::{CachedProvider, LlmCache};
pub use provider::{parse_candidates, HttpLlmProvider, LlmProvider, StubProvider, API_KEY_ENV, SYSTEM_INSTRUCTION};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "what categories are similar to [class] in semantic or appearance";
pub const DEFAULT_DESCRIPTION_TEMPLATE: &str = "This is a photo of a [CLASS]";
pub const PROMPT_PLACEHOLDER: &str = "[class]";
pub const DESCRIPTION_PLACEHOLDER: &str = "[CLASS]";
pub const DEFAULT_PEERS_PER_CLASS: usize = 3;
pub const DEFAULT_MAX_REQUERY_ATTEMPTS: usize = 5;

/// Appended to the prompt on every re-query.
pub fn requery_suffix(attempt: usize) -> String {
    format!(" (give different answers, attempt {attempt})")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpLlm,
    #[default]
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeerGenConfig {
    pub peers_per_class: usize,
    pub prompt_template: String,
    pub description_template: String,
    pub provider_kind: ProviderKind,
    pub max_requery_attempts: usize,
    pub offline: bool,
    pub stub_seed: u64,
    pub llm_endpoint: String,
    pub llm_model: String,
}

impl Default for PeerGenConfig {
    fn default() -> Self {
        Self {
            peers_per_class: DEFAULT_PEERS_PER_CLASS,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            description_template: DEFAULT_DESCRIPTION_TEMPLATE.into(),
            provider_kind: ProviderKind::Stub,
            max_requery_attempts: DEFAULT_MAX_REQUERY_ATTEMPTS,
            offline: false,
            stub_seed: 0,
            llm_endpoint: "https://api.openai.com/v1/chat/completions".into(),
            llm_model: "gpt-3.5-turbo-instruct".into(),
        }
    }
}

impl PeerGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_template.matches(PROMPT_PLACEHOLDER).count() != 1 {
            return Err(invalid(format!("prompt template must contain {PROMPT_PLACEHOLDER} exactly once")));
        }
        if self.description_template.matches(DESCRIPTION_PLACEHOLDER).count() != 1 {
            return Err(invalid(format!("description template must contain {DESCRIPTION_PLACEHOLDER} exactly once")));
        }
        if self.max_requery_attempts == 0 {
            return Err(invalid("max_requery_attempts must be positive"));
        }
        Ok(())
    }
}

/// Case-folded, trimmed label used for every equality test.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

pub fn build_prompt(class_label: &str, cfg: &PeerGenConfig) -> Result<String> {
    let label = class_label.trim();
    if label.is_empty() {
        return Err(invalid("class label is empty"));
    }
    Ok(cfg.prompt_template.replacen(PROMPT_PLACEHOLDER, label, 1))
}

pub fn render_description(label: &str, cfg: &PeerGenConfig) -> Result<String> {
    let label = label.trim();
    if label.is_empty() {
        return Err(invalid("label is empty"));
    }
    Ok(cfg.description_template.replacen(DESCRIPTION_PLACEHOLDER, label, 1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerClassSet {
    pub id_labels: Vec<String>,
    /// Keyed by ID label, in `id_labels` order.
    pub peers: IndexMap<String, Vec<String>>,
    pub provenance: Provenance,
}

impl PeerClassSet {
    pub fn peers_of(&self, id_label: &str) -> Option<&[String]> {
        self.peers.get(id_label).map(Vec::as_slice)
    }

    /// Distinct peer labels across all classes, first-seen order.
    pub fn distinct_peers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.peers.values().flatten().filter(|p| seen.insert(p.as_str())).cloned().collect()
    }

    /// Checks the label invariants against the ID set.
    pub fn validate(&self) -> Result<()> {
        let ids: HashSet<String> = self.id_labels.iter().map(|l| normalize_label(l)).collect();
        if ids.len() != self.id_labels.len() {
            return Err(invalid("ID labels are not distinct after normalisation"));
        }
        for label in &self.id_labels {
            let peers = self.peers.get(label).ok_or_else(|| invalid(format!("no peer list for {label:?}")))?;
            let mut local = HashSet::new();
            for p in peers {
                let norm = normalize_label(p);
                if norm.is_empty() || ids.contains(&norm) || !local.insert(norm) {
                    return Err(invalid(format!("peer {p:?} of {label:?} violates label invariants")));
                }
            }
        }
        if self.peers.len() != self.id_labels.len() {
            return Err(invalid("peer map has keys outside the ID label set"));
        }
        Ok(())
    }
}

/// On-disk `peers.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeersFile {
    pub prompt_template: String,
    pub description_template: String,
    pub n: usize,
    pub classes: IndexMap<String, Vec<String>>,
    pub provenance: Provenance,
}

impl PeersFile {
    pub fn from_set(set: &PeerClassSet, cfg: &PeerGenConfig) -> Self {
        Self {
            prompt_template: cfg.prompt_template.clone(),
            description_template: cfg.description_template.clone(),
            n: cfg.peers_per_class,
            classes: set.peers.clone(),
            provenance: set.provenance.clone(),
        }
    }

    pub fn into_set(self) -> Result<PeerClassSet> {
        let set = PeerClassSet {
            id_labels: self.classes.keys().cloned().collect(),
            peers: self.classes,
            provenance: self.provenance,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        persist::write_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        persist::read_json(path)
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn peers_for_class(
    label: &str,
    id_set: &HashSet<String>,
    cfg: &PeerGenConfig,
    provider: &dyn LlmProvider,
) -> Result<Vec<String>> {
    let n = cfg.peers_per_class;
    let mut accepted: Vec<String> = Vec::with_capacity(n);
    if n == 0 {
        return Ok(accepted);
    }
    let base = build_prompt(label, cfg)?;
    let gen_err = |reason: String| OdpcError::Generation { class: label.to_string(), reason };
    for attempt in 0..=cfg.max_requery_attempts {
        let prompt = if attempt == 0 { base.clone() } else { format!("{base}{}", requery_suffix(attempt)) };
        let candidates = provider.request(&prompt).map_err(|e| match e {
            OdpcError::Offline(_) => e,
            other => gen_err(other.to_string()),
        })?;
        for c in candidates {
            let norm = normalize_label(&c);
            if norm.is_empty() || id_set.contains(&norm) || accepted.contains(&norm) {
                continue;
            }
            accepted.push(norm);
            if accepted.len() == n {
                return Ok(accepted);
            }
        }
        log::debug!("class {label:?}: {} of {n} peers after attempt {attempt}", accepted.len());
    }
    Err(gen_err(format!("only {} of {n} valid peers after {} re-queries", accepted.len(), cfg.max_requery_attempts)))
}

/// Queries `provider` once per class (plus re-queries) and keeps the first
/// `peers_per_class` candidates that survive normalisation and filtering.
pub fn generate_peer_classes<S: AsRef<str> + Sync>(
    id_labels: &[S],
    cfg: &PeerGenConfig,
    provider: &dyn LlmProvider,
) -> Result<PeerClassSet> {
    cfg.validate()?;
    if id_labels.is_empty() {
        return Err(invalid("no ID labels given"));
    }
    let labels: Vec<String> = id_labels.iter().map(|l| l.as_ref().trim().to_string()).collect();
    let id_set: HashSet<String> = labels.iter().map(|l| normalize_label(l)).collect();
    if id_set.len() != labels.len() || id_set.contains("") {
        return Err(invalid("ID labels must be non-empty and distinct after normalisation"));
    }
    let lists: Vec<Vec<String>> =
        labels.par_iter().map(|l| peers_for_class(l, &id_set, cfg, provider)).collect::<Result<_>>()?;
    let set = PeerClassSet {
        peers: labels.iter().cloned().zip(lists).collect(),
        id_labels: labels,
        provenance: Provenance { provider: provider.id(), created_unix: now_unix() },
    };
    set.validate()?;
    Ok(set)
}
