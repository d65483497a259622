use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::encoders::fnv1a;
use crate::error::{OdpcError, Result};

pub const API_KEY_ENV: &str = "ODPC_LLM_API_KEY";

/// Instruction sent alongside every prompt to the HTTP provider.
pub const SYSTEM_INSTRUCTION: &str = "Answer with a list of short category names only, \
one per line, without numbering or explanations.";

/// Source of candidate peer labels for a prompt.
pub trait LlmProvider: Send + Sync {
    /// Identifier used in provenance records and cache keys.
    fn id(&self) -> String;

    /// Whether answering requires network access.
    fn is_remote(&self) -> bool;

    fn request(&self, prompt: &str) -> Result<Vec<String>>;
}

/// Splits a free-text answer into label candidates: one per line or comma,
/// with list bullets, numbering and surrounding quotes stripped.
pub fn parse_candidates(text: &str) -> Vec<String> {
    text.split(['\n', ',', ';'])
        .map(|item| {
            let item = item.trim();
            let item = item.trim_start_matches(|c: char| c.is_ascii_digit());
            let item = item.trim_start_matches(['.', ')', '-', '*', '•', ' ']);
            item.trim().trim_matches(['"', '\'', '.']).trim().to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

const STUB_VOCABULARY: &[&str] = &[
    "wolf",
    "fox",
    "coyote",
    "jackal",
    "hyena",
    "lynx",
    "leopard",
    "cheetah",
    "puma",
    "ocelot",
    "raccoon",
    "badger",
    "otter",
    "ferret",
    "weasel",
    "mink",
    "marten",
    "skunk",
    "opossum",
    "hare",
    "rabbit",
    "squirrel",
    "chipmunk",
    "hamster",
    "gerbil",
    "beaver",
    "porcupine",
    "hedgehog",
    "mole",
    "shrew",
    "antelope",
    "gazelle",
    "elk",
    "moose",
    "reindeer",
    "bison",
    "yak",
    "buffalo",
    "donkey",
    "mule",
    "zebra",
    "pony",
    "camel",
    "llama",
    "alpaca",
    "goat",
    "sheep",
    "ox",
    "pig",
    "boar",
    "toad",
    "newt",
    "salamander",
    "lizard",
    "gecko",
    "iguana",
    "chameleon",
    "tortoise",
    "turtle",
    "crocodile",
    "sparrow",
    "finch",
    "robin",
    "pigeon",
    "dove",
    "parrot",
    "crow",
    "raven",
    "hawk",
    "falcon",
    "eagle",
    "owl",
    "heron",
    "stork",
    "crane",
    "pelican",
    "swan",
    "goose",
    "duck",
    "penguin",
    "helicopter",
    "glider",
    "drone",
    "blimp",
    "jet",
    "van",
    "minivan",
    "jeep",
    "taxi",
    "limousine",
    "boat",
    "yacht",
    "canoe",
    "ferry",
    "submarine",
    "sailboat",
    "lorry",
    "bus",
    "tractor",
    "trailer",
    "pickup",
    "forklift",
    "bulldozer",
    "tram",
    "train",
    "scooter",
    "motorcycle",
    "bicycle",
    "rocket",
    "hovercraft",
];

const STUB_CANDIDATES_PER_ANSWER: usize = 8;

/// Offline provider. Scripted prompts return their script; any other prompt
/// draws candidates from a fixed vocabulary with an RNG seeded by
/// `(prompt, seed)`.
#[derive(Debug, Default)]
pub struct StubProvider {
    seed: u64,
    scripts: HashMap<String, Vec<String>>,
    calls: AtomicUsize,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed, scripts: HashMap::new(), calls: AtomicUsize::new(0) }
    }

    pub fn with_script(mut self, prompt: &str, answer: &[&str]) -> Self {
        self.scripts.insert(prompt.to_string(), answer.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl LlmProvider for StubProvider {
    fn id(&self) -> String {
        format!("stub:{}", self.seed)
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn request(&self, prompt: &str) -> Result<Vec<String>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(answer) = self.scripts.get(prompt) {
            return Ok(answer.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()) ^ self.seed);
        Ok(STUB_VOCABULARY.choose_multiple(&mut rng, STUB_CANDIDATES_PER_ANSWER).map(|s| s.to_string()).collect())
    }
}

/// Chat-completions style HTTP endpoint. The API key is read from
/// [`API_KEY_ENV`] at construction.
#[derive(Debug)]
pub struct HttpLlmProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpLlmProvider {
    pub fn new(endpoint: &str, model: &str) -> Result<Self> {
        Self::with_key(endpoint, model, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_key(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| OdpcError::Provider(e.to_string()))?;
        Ok(Self { endpoint: endpoint.to_string(), model: model.to_string(), api_key, client })
    }
}

fn response_text(body: &Value) -> Option<&str> {
    let choice = body.get("choices")?.get(0)?;
    choice.get("message").and_then(|m| m.get("content")).or_else(|| choice.get("text")).and_then(Value::as_str)
}

impl LlmProvider for HttpLlmProvider {
    fn id(&self) -> String {
        format!("http:{}:{}", self.endpoint, self.model)
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn request(&self, prompt: &str) -> Result<Vec<String>> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": SYSTEM_INSTRUCTION},
                {"role": "user", "content": prompt},
            ],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| OdpcError::Provider(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(OdpcError::Provider(format!("endpoint returned HTTP {status}")));
        }
        let value: Value = resp.json().map_err(|e| OdpcError::Provider(e.to_string()))?;
        let text =
            response_text(&value).ok_or_else(|| OdpcError::Provider("response has no completion text".into()))?;
        Ok(parse_candidates(text))
    }
}
