//! HTTP client for the logprob wire protocol.
//!
//! Request: `{"prompt_tokens": [..] | "prompt_text": "..", "mode": "full"|"topk", "k": n}`
//! Response: `{"logits": [..]}` in full mode, `{"topk": [{"id": n, "logprob": x}, ..]}`
//! in top-k mode. Any non-200 status is an error. Transport-level failures and
//! timeouts are retried up to the configured count; status and protocol
//! errors are not.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{LogitVector, TopKLogProbs};
use crate::sources::{LogitSource, StepOutput};
use crate::vocab::{TokenId, Vocabulary};

/// Shape of the per-step payload a backend serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireMode {
    Full,
    TopK,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    #[serde(default = "default_mode")]
    pub mode: WireMode,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub auth_token: Option<String>,
}

fn default_mode() -> WireMode {
    WireMode::Full
}

fn default_k() -> usize {
    5
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            mode: WireMode::Full,
            k: default_k(),
            timeout_ms: default_timeout_ms(),
            retries: 0,
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidInput("timeout must be positive".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Prefix sent to the backend, as ids when the vocabulary is shared or as
/// raw text when the server tokenizes on its side.
#[derive(Debug, Clone, Copy)]
pub enum RequestPayload<'a> {
    Tokens(&'a [TokenId]),
    Text(&'a str),
}

#[derive(Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_tokens: Option<&'a [TokenId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_text: Option<&'a str>,
    mode: WireMode,
    k: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    topk: Option<Vec<WireTopKEntry>>,
}

#[derive(Deserialize)]
struct WireTopKEntry {
    id: TokenId,
    logprob: f64,
}

/// One protocol exchange with retries, no source wrapper.
pub fn http_next(
    cfg: &HttpBackendConfig,
    vocab_size: usize,
    payload: RequestPayload<'_>,
) -> Result<StepOutput> {
    cfg.validate()?;
    let agent = build_agent(cfg);
    request_step(&agent, cfg, vocab_size, payload)
}

fn build_agent(cfg: &HttpBackendConfig) -> ureq::Agent {
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .build();
    ureq::Agent::new_with_config(config)
}

fn request_step(
    agent: &ureq::Agent,
    cfg: &HttpBackendConfig,
    vocab_size: usize,
    payload: RequestPayload<'_>,
) -> Result<StepOutput> {
    let request = match payload {
        RequestPayload::Tokens(tokens) => WireRequest {
            prompt_tokens: Some(tokens),
            prompt_text: None,
            mode: cfg.mode,
            k: cfg.k,
        },
        RequestPayload::Text(text) => WireRequest {
            prompt_tokens: None,
            prompt_text: Some(text),
            mode: cfg.mode,
            k: cfg.k,
        },
    };

    let attempts = cfg.retries + 1;
    let mut last_err = None;
    for _ in 0..attempts {
        match send_once(agent, cfg, &request, vocab_size) {
            Ok(out) => return Ok(out),
            Err(e) => {
                let retryable = matches!(e, Error::Timeout { .. } | Error::Transport { .. });
                if !retryable {
                    return Err(e);
                }
                last_err = Some(e);
            }
        }
    }
    Err(match last_err.expect("at least one attempt") {
        Error::Timeout { endpoint, .. } => Error::Timeout { endpoint, attempts },
        other => other,
    })
}

fn send_once(
    agent: &ureq::Agent,
    cfg: &HttpBackendConfig,
    request: &WireRequest<'_>,
    vocab_size: usize,
) -> Result<StepOutput> {
    let mut builder = agent.post(&cfg.endpoint);
    if let Some(token) = &cfg.auth_token {
        builder = builder.header("authorization", format!("Bearer {token}"));
    }
    let mut response = builder
        .send_json(request)
        .map_err(|e| classify(e, &cfg.endpoint))?;
    let wire: WireResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| classify(e, &cfg.endpoint))?;
    parse_response(wire, cfg, vocab_size)
}

fn classify(e: ureq::Error, endpoint: &str) -> Error {
    match e {
        ureq::Error::StatusCode(status) => Error::HttpStatus {
            endpoint: endpoint.to_string(),
            status,
        },
        ureq::Error::Timeout(_) => Error::Timeout {
            endpoint: endpoint.to_string(),
            attempts: 1,
        },
        ureq::Error::Json(e) => Error::Protocol {
            endpoint: endpoint.to_string(),
            message: format!("malformed response body: {e}"),
        },
        other => Error::Transport {
            endpoint: endpoint.to_string(),
            message: other.to_string(),
        },
    }
}

fn parse_response(
    wire: WireResponse,
    cfg: &HttpBackendConfig,
    vocab_size: usize,
) -> Result<StepOutput> {
    let protocol_err = |message: String| Error::Protocol {
        endpoint: cfg.endpoint.clone(),
        message,
    };
    match cfg.mode {
        WireMode::Full => {
            let logits = wire
                .logits
                .ok_or_else(|| protocol_err("missing 'logits' field in full mode".into()))?;
            if logits.len() != vocab_size {
                return Err(protocol_err(format!(
                    "expected {vocab_size} logits, got {}",
                    logits.len()
                )));
            }
            let vector = LogitVector::new(logits).map_err(|e| protocol_err(e.to_string()))?;
            Ok(StepOutput::Full(vector))
        }
        WireMode::TopK => {
            let entries = wire
                .topk
                .ok_or_else(|| protocol_err("missing 'topk' field in top-k mode".into()))?;
            if entries.len() != cfg.k {
                return Err(protocol_err(format!(
                    "expected {} top-k entries, got {}",
                    cfg.k,
                    entries.len()
                )));
            }
            let mut pairs: Vec<(TokenId, f64)> =
                entries.into_iter().map(|e| (e.id, e.logprob)).collect();
            if let Some(&(bad, _)) = pairs.iter().find(|(id, _)| (*id as usize) >= vocab_size) {
                return Err(protocol_err(format!(
                    "top-k token id {bad} outside vocabulary of size {vocab_size}"
                )));
            }
            // Descending by logprob, ties toward the lower token id.
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let topk = TopKLogProbs::new(pairs).map_err(|e| protocol_err(e.to_string()))?;
            Ok(StepOutput::TopK(topk))
        }
    }
}

/// A remote backend bound to a vocabulary known out-of-band.
pub struct HttpSource {
    cfg: HttpBackendConfig,
    vocab: Vocabulary,
    agent: ureq::Agent,
}

impl HttpSource {
    pub fn new(cfg: HttpBackendConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let agent = build_agent(&cfg);
        Ok(HttpSource { cfg, vocab, agent })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.cfg
    }

    /// Whether the endpoint answers at all (any HTTP response counts).
    pub fn probe_reachable(&self) -> bool {
        let empty: &[TokenId] = &[];
        match request_step(
            &self.agent,
            &self.cfg,
            self.vocab.size(),
            RequestPayload::Tokens(empty),
        ) {
            Ok(_) => true,
            Err(Error::Timeout { .. }) | Err(Error::Transport { .. }) => false,
            Err(_) => true,
        }
    }
}

impl LogitSource for HttpSource {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        request_step(
            &self.agent,
            &self.cfg,
            self.vocab.size(),
            RequestPayload::Tokens(prefix),
        )
    }
}

impl std::fmt::Debug for HttpSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpSource")
            .field("endpoint", &self.cfg.endpoint)
            .field("mode", &self.cfg.mode)
            .finish()
    }
}
