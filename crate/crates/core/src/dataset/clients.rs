//! Generation and frequency clients: live HTTP adapters plus the
//! deterministic stubs the tests and the offline pipeline run on.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::decode::TemplateSet;
use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// Text generator behind a prompt template; deterministic under a stub.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, template_id: &str, vars: &BTreeMap<&str, &str>) -> Result<String>;
}

/// Corpus-frequency lookup for a term.
pub trait FrequencyClient: Send + Sync {
    fn count(&self, term: &str) -> Result<u64>;
}

/// Canned-response generation client.
///
/// Scripted responses (per template id, consumed in order) take precedence;
/// otherwise a fixed synthesis rule produces a deterministic answer from the
/// variables, so full pipeline runs are reproducible byte for byte.
#[derive(Default)]
pub struct StubGenerationClient {
    scripted: Mutex<HashMap<String, VecDeque<String>>>,
    calls: Mutex<Vec<String>>,
}

impl StubGenerationClient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue a response for a template id; earlier pushes are served first.
    pub fn push_response(&self, template_id: &str, text: impl Into<String>) {
        self.scripted
            .lock()
            .unwrap()
            .entry(template_id.to_string())
            .or_default()
            .push_back(text.into());
    }

    /// Template ids seen so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    fn synthesize(template_id: &str, vars: &BTreeMap<&str, &str>) -> Result<String> {
        let var = |name: &str| vars.get(name).copied().unwrap_or("");
        let text = match template_id {
            "perturb-minor" => format!("alt-{}", var("answer")),
            "perturb-major" => format!("offcat-{}", var("answer")),
            "context-short" => format!(
                "It is well documented that {} is the answer.",
                var("answer")
            ),
            "context-long" => format!(
                "Several independent sources address this question. A careful review shows \
                 that {} is the answer. The surrounding evidence supports this reading in detail.",
                var("answer")
            ),
            "explain-support" => format!("The context directly states {}.", var("answer")),
            "explain-refute" => format!(
                "The context is misleading here; the correct answer remains {}.",
                var("answer")
            ),
            "relatedness" => {
                let score = lexical_relatedness(var("first"), var("second"));
                format!("{}", (score * 100.0).round() as u64)
            }
            other => {
                return Err(Error::Client(format!(
                    "stub has no synthesis rule for template {other:?}"
                )))
            }
        };
        Ok(text)
    }
}

impl GenerationClient for StubGenerationClient {
    fn generate(&self, template_id: &str, vars: &BTreeMap<&str, &str>) -> Result<String> {
        self.calls.lock().unwrap().push(template_id.to_string());
        if let Some(queue) = self.scripted.lock().unwrap().get_mut(template_id) {
            if let Some(text) = queue.pop_front() {
                return Ok(text);
            }
        }
        Self::synthesize(template_id, vars)
    }
}

/// Character-bigram overlap in `[0, 1]`; deterministic and symmetric.
pub(crate) fn lexical_relatedness(a: &str, b: &str) -> f64 {
    fn bigrams(s: &str) -> Vec<(char, char)> {
        let chars: Vec<char> = s
            .to_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        chars.windows(2).map(|w| (w[0], w[1])).collect()
    }
    let (ba, bb) = (bigrams(a), bigrams(b));
    if ba.is_empty() || bb.is_empty() {
        return if a.eq_ignore_ascii_case(b) { 1.0 } else { 0.0 };
    }
    let mut pool = bb.clone();
    let mut shared = 0usize;
    for g in &ba {
        if let Some(at) = pool.iter().position(|x| x == g) {
            pool.swap_remove(at);
            shared += 1;
        }
    }
    2.0 * shared as f64 / (ba.len() + bb.len()) as f64
}

/// Adapter config for a hosted chat-completions endpoint. The auth token is
/// read from the named environment variable at call time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Live generation client speaking the common chat-completions shape:
/// request `{"model", "messages":[{"role":"user","content": ...}]}`,
/// response `choices[0].message.content`.
pub struct HttpGenerationClient {
    cfg: HttpClientConfig,
    templates: TemplateSet,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

impl HttpGenerationClient {
    pub fn new(cfg: HttpClientConfig, templates: TemplateSet) -> Result<Self> {
        if cfg.timeout_ms == 0 {
            return Err(Error::InvalidInput("timeout must be positive".into()));
        }
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build();
        Ok(HttpGenerationClient {
            cfg,
            templates,
            agent: ureq::Agent::new_with_config(agent_cfg),
        })
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, template_id: &str, vars: &BTreeMap<&str, &str>) -> Result<String> {
        let prompt = self.templates.render_vars(template_id, vars)?;
        let request = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage {
                role: "user",
                content: &prompt,
            }],
        };
        let mut builder = self.agent.post(&self.cfg.endpoint);
        if let Some(env_name) = &self.cfg.auth_env {
            let token = std::env::var(env_name).map_err(|_| {
                Error::Client(format!("auth environment variable {env_name} not set"))
            })?;
            builder = builder.header("authorization", format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(&request)
            .map_err(|e| Error::Client(format!("{}: {e}", self.cfg.endpoint)))?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("{}: bad response: {e}", self.cfg.endpoint)))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Client(format!("{}: empty choices", self.cfg.endpoint)))
    }
}

/// Deterministic pseudo-frequencies spread across all three popularity bands.
#[derive(Debug, Default, Clone)]
pub struct StubFrequencyClient;

impl StubFrequencyClient {
    pub fn new() -> Self {
        StubFrequencyClient
    }
}

impl FrequencyClient for StubFrequencyClient {
    fn count(&self, term: &str) -> Result<u64> {
        let h = fnv1a64(term.as_bytes());
        Ok(match h % 3 {
            0 => h % 1_001,               // rank 1: 0..=1000
            1 => 1_001 + h % 98_999,      // rank 2: 1001..=99_999
            _ => 100_000 + h % 1_000_000, // rank 3
        })
    }
}

/// Caching layer over a frequency client, optionally persisted as JSON Lines
/// `{term, count, timestamp}` so slow corpus lookups are done once.
pub struct CachedFrequencyClient<C> {
    inner: C,
    cache: Mutex<HashMap<String, u64>>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    term: String,
    count: u64,
    timestamp: u64,
}

impl<C: FrequencyClient> CachedFrequencyClient<C> {
    pub fn new(inner: C) -> Self {
        CachedFrequencyClient {
            inner,
            cache: Mutex::new(HashMap::new()),
            path: None,
        }
    }

    /// Load any existing cache file and append new lookups to it.
    pub fn with_disk(inner: C, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut cache = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                cache.insert(parsed.term, parsed.count);
            }
        }
        Ok(CachedFrequencyClient {
            inner,
            cache: Mutex::new(cache),
            path: Some(path),
        })
    }

    fn persist(&self, term: &str, count: u64) {
        let Some(path) = &self.path else { return };
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let line = serde_json::to_string(&CacheLine {
            term: term.to_string(),
            count,
            timestamp,
        })
        .expect("cache line serializes");
        let appended = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| {
                use std::io::Write;
                writeln!(f, "{line}")
            });
        if let Err(e) = appended {
            log::warn!("frequency cache write to {} failed: {e}", path.display());
        }
    }
}

impl<C: FrequencyClient> FrequencyClient for CachedFrequencyClient<C> {
    fn count(&self, term: &str) -> Result<u64> {
        if let Some(&hit) = self.cache.lock().unwrap().get(term) {
            return Ok(hit);
        }
        let count = self.inner.count(term)?;
        self.cache.lock().unwrap().insert(term.to_string(), count);
        self.persist(term, count);
        Ok(count)
    }
}
