//! HTTP gateway for steered generation.
//!
//! Per request the service runs the same greedy steered decode as the
//! library, fanning out to three configured backends (`l` the steered model,
//! `p` and `n` the proxies) at every step. Alpha is per-request, so one
//! running gateway can serve both context-leaning and parametric-leaning
//! callers.
//!
//! Endpoints:
//! - `POST /v1/steered_completions` — body `{prompt | prompt_tokens,
//!   alpha?, max_tokens, mode?, k?, stop?, trace?}`; 200 with
//!   `{tokens, text, alpha_used, steps?}`.
//! - `GET /v1/health` — per-backend reachability and the config digest,
//!   always 200.
//!
//! Errors: 400 malformed request, 401 bad bearer token, 409 vocabulary
//! incompatibility, 502 backend failure (naming the backend), 504 backend
//! timeout.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, Semaphore};

use steer_core::decode::{steered_generate_tokens, SourceTriple, StepTrace, StopRule};
use steer_core::error::{Error, Result};
use steer_core::logits::{SteerMode, SteeringConfig};
use steer_core::sources::{HttpBackendConfig, HttpSource, LogitSource, StepOutput, TableLm};
use steer_core::util::fnv1a64;
use steer_core::vocab::{TokenId, Vocabulary};

pub const ENV_LISTEN: &str = "STEER_GATEWAY_LISTEN";
pub const ENV_AUTH_TOKEN: &str = "STEER_GATEWAY_AUTH_TOKEN";

/// One backend: a table-model file or a remote logprob endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendSpec {
    Table(PathBuf),
    Http(HttpBackendConfig),
}

/// The three backends by role: `l` is steered, `p` and `n` steer it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendTriple {
    pub l: BackendSpec,
    pub p: BackendSpec,
    pub n: BackendSpec,
}

/// Declarative gateway configuration (one JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub listen: String,
    pub backends: BackendTriple,
    #[serde(default)]
    pub default_steering: SteeringConfig,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_requests: usize,
    #[serde(default = "default_token_budget")]
    pub token_budget: usize,
    /// Vocabulary file (JSON array of token strings); required when no
    /// backend is a table model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Shared bearer token; absent means unauthenticated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

fn default_max_concurrent() -> usize {
    8
}

fn default_token_budget() -> usize {
    256
}

impl GatewayConfig {
    /// Parse the config file and apply `STEER_GATEWAY_*` env overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: GatewayConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Ok(listen) = std::env::var(ENV_LISTEN) {
            config.listen = listen;
        }
        if let Ok(token) = std::env::var(ENV_AUTH_TOKEN) {
            config.auth_token = Some(token);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_budget < 1 {
            return Err(Error::InvalidInput(
                "token budget must be at least 1".into(),
            ));
        }
        if self.max_concurrent_requests < 1 {
            return Err(Error::InvalidInput(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        self.default_steering.validate()
    }
}

enum ResolvedBackend {
    Table(TableLm),
    Http(HttpSource),
}

impl ResolvedBackend {
    fn reachable(&self) -> bool {
        match self {
            ResolvedBackend::Table(_) => true,
            ResolvedBackend::Http(source) => source.probe_reachable(),
        }
    }
}

impl LogitSource for ResolvedBackend {
    fn vocabulary(&self) -> &Vocabulary {
        match self {
            ResolvedBackend::Table(t) => t.vocabulary(),
            ResolvedBackend::Http(h) => h.vocabulary(),
        }
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        match self {
            ResolvedBackend::Table(t) => t.next_step(prefix),
            ResolvedBackend::Http(h) => h.next_step(prefix),
        }
    }
}

/// Backends, shared vocabulary, and per-request limits, fully resolved.
pub struct GatewayState {
    base: ResolvedBackend,
    pos: ResolvedBackend,
    neg: ResolvedBackend,
    vocab: Vocabulary,
    default_steering: SteeringConfig,
    token_budget: usize,
    auth_token: Option<String>,
    config_digest: String,
    permits: Semaphore,
}

impl GatewayState {
    /// Load table files, settle the vocabulary, and bind HTTP clients.
    pub fn resolve(config: &GatewayConfig) -> Result<Self> {
        config.validate()?;
        let load_table = |spec: &BackendSpec| -> Result<Option<TableLm>> {
            match spec {
                BackendSpec::Table(path) => Ok(Some(TableLm::load(path)?)),
                BackendSpec::Http(_) => Ok(None),
            }
        };
        let tables = [
            load_table(&config.backends.l)?,
            load_table(&config.backends.p)?,
            load_table(&config.backends.n)?,
        ];

        let vocab = match &config.vocab {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str::<Vocabulary>(&text).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: e.line(),
                    message: e.to_string(),
                })?
            }
            None => tables
                .iter()
                .flatten()
                .next()
                .map(|t| t.vocabulary().clone())
                .ok_or_else(|| {
                    Error::InvalidInput(
                        "no vocabulary: configure 'vocab' or use at least one table backend".into(),
                    )
                })?,
        };

        let mut tables = tables.into_iter();
        let mut resolve_one = |spec: &BackendSpec| -> Result<ResolvedBackend> {
            let preloaded = tables.next().flatten();
            match spec {
                BackendSpec::Table(_) => Ok(ResolvedBackend::Table(
                    preloaded.expect("table preloaded above"),
                )),
                BackendSpec::Http(http_cfg) => Ok(ResolvedBackend::Http(HttpSource::new(
                    http_cfg.clone(),
                    vocab.clone(),
                )?)),
            }
        };
        let base = resolve_one(&config.backends.l)?;
        let pos = resolve_one(&config.backends.p)?;
        let neg = resolve_one(&config.backends.n)?;

        let digest = fnv1a64(&serde_json::to_vec(config).expect("config serializes"));
        Ok(GatewayState {
            base,
            pos,
            neg,
            vocab,
            default_steering: config.default_steering.clone(),
            token_budget: config.token_budget,
            auth_token: config.auth_token.clone(),
            config_digest: format!("{digest:016x}"),
            permits: Semaphore::new(config.max_concurrent_requests),
        })
    }

    fn sources(&self) -> SourceTriple<'_> {
        SourceTriple::new(&self.base, &self.pos, &self.neg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompletionRequest {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    prompt_tokens: Option<Vec<TokenId>>,
    #[serde(default)]
    alpha: Option<f64>,
    max_tokens: usize,
    #[serde(default)]
    mode: Option<SteerMode>,
    #[serde(default)]
    k: Option<usize>,
    /// Stop strings, each a single vocabulary token.
    #[serde(default)]
    stop: Option<Vec<String>>,
    #[serde(default)]
    trace: bool,
}

#[derive(Debug, Serialize)]
struct CompletionResponse {
    tokens: Vec<TokenId>,
    text: String,
    alpha_used: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<Vec<StepTrace>>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    backend: Option<String>,
}

fn error_response(e: &Error) -> Response {
    let status = match e.root() {
        Error::VocabIncompatible { .. } => StatusCode::CONFLICT,
        Error::Timeout { .. } => StatusCode::GATEWAY_TIMEOUT,
        Error::HttpStatus { .. }
        | Error::Transport { .. }
        | Error::Protocol { .. }
        | Error::Client(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::BAD_REQUEST,
    };
    let backend = e.backend_name().map(|name| {
        match name {
            "base" => "l",
            "pos" => "p",
            "neg" => "n",
            other => other,
        }
        .to_string()
    });
    (
        status,
        Json(ErrorBody {
            error: e.to_string(),
            backend,
        }),
    )
        .into_response()
}

fn bad_request(message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(ErrorBody {
            error: message.into(),
            backend: None,
        }),
    )
        .into_response()
}

fn check_auth(state: &GatewayState, headers: &HeaderMap) -> Option<Response> {
    let expected = state.auth_token.as_ref()?;
    let presented = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(expected.as_str()) {
        None
    } else {
        Some(
            (
                StatusCode::UNAUTHORIZED,
                Json(ErrorBody {
                    error: "missing or invalid bearer token".into(),
                    backend: None,
                }),
            )
                .into_response(),
        )
    }
}

async fn steered_completions(
    State(state): State<Arc<GatewayState>>,
    headers: HeaderMap,
    Json(request): Json<CompletionRequest>,
) -> Response {
    if let Some(denied) = check_auth(&state, &headers) {
        return denied;
    }
    let _permit = state.permits.acquire().await.expect("semaphore open");

    if request.max_tokens < 1 {
        return bad_request("max_tokens must be at least 1");
    }
    let prompt_tokens = match (&request.prompt, &request.prompt_tokens) {
        (Some(_), Some(_)) => {
            return bad_request("provide either prompt or prompt_tokens, not both")
        }
        (None, None) => return bad_request("provide prompt or prompt_tokens"),
        (Some(text), None) => match state.vocab.encode_text(text) {
            Ok(tokens) => tokens,
            Err(e) => return bad_request(e.to_string()),
        },
        (None, Some(tokens)) => {
            if let Some(&bad) = tokens.iter().find(|&&t| !state.vocab.contains_id(t)) {
                return bad_request(format!("prompt token id {bad} out of vocabulary"));
            }
            tokens.clone()
        }
    };
    let mut stop_tokens = Vec::new();
    for word in request.stop.iter().flatten() {
        match state.vocab.id_of(word) {
            Some(id) => stop_tokens.push(id),
            None => return bad_request(format!("stop token {word:?} not in vocabulary")),
        }
    }

    let mut cfg = state.default_steering.clone();
    if let Some(alpha) = request.alpha {
        cfg.alpha = alpha;
    }
    if let Some(mode) = request.mode {
        cfg.mode = mode;
    }
    if let Some(k) = request.k {
        cfg.k = k;
    }
    let stop = StopRule {
        // The server budget caps whatever the request asks for.
        max_tokens: request.max_tokens.min(state.token_budget),
        stop_tokens,
    };
    let trace_top = request.trace.then_some(cfg.k.max(5));

    let state2 = Arc::clone(&state);
    let cfg2 = cfg.clone();
    let generated = tokio::task::spawn_blocking(move || {
        steered_generate_tokens(&state2.sources(), &cfg2, &prompt_tokens, &stop, trace_top)
    })
    .await
    .expect("decode task not cancelled");

    match generated {
        Ok(generation) => (
            StatusCode::OK,
            Json(CompletionResponse {
                tokens: generation.tokens,
                text: generation.text,
                alpha_used: cfg.alpha,
                steps: generation.trace,
            }),
        )
            .into_response(),
        Err(e) => error_response(&e),
    }
}

#[derive(Debug, Serialize)]
struct HealthResponse {
    l: bool,
    p: bool,
    n: bool,
    config_digest: String,
}

async fn health(State(state): State<Arc<GatewayState>>, headers: HeaderMap) -> Response {
    if let Some(denied) = check_auth(&state, &headers) {
        return denied;
    }
    let state2 = Arc::clone(&state);
    let (l, p, n) = tokio::task::spawn_blocking(move || {
        (
            state2.base.reachable(),
            state2.pos.reachable(),
            state2.neg.reachable(),
        )
    })
    .await
    .expect("probe task not cancelled");
    (
        StatusCode::OK,
        Json(HealthResponse {
            l,
            p,
            n,
            config_digest: state.config_digest.clone(),
        }),
    )
        .into_response()
}

/// Router serving the two endpoints over shared state.
pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/v1/steered_completions", post(steered_completions))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Bind and serve until `shutdown` resolves; in-flight requests drain first.
/// `on_bound` receives the actual bound address (useful with port 0).
pub async fn run(
    config: GatewayConfig,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let state = Arc::new(GatewayState::resolve(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| Error::Io {
            path: config.listen.clone(),
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| Error::Io {
        path: config.listen.clone(),
        source,
    })?;
    on_bound(addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|source| Error::Io {
            path: addr.to_string(),
            source,
        })
}

/// A gateway running on its own runtime thread; for tests and tooling.
pub struct RunningGateway {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningGateway {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RunningGateway {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Start a gateway in the background and report its bound address.
pub fn start(config: GatewayConfig) -> Result<RunningGateway> {
    // Resolve up front so startup errors surface here, not on the thread.
    GatewayState::resolve(&config)?;
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        let served = runtime.block_on(run(
            config,
            move |addr| {
                let _ = addr_tx.send(addr);
            },
            async move {
                let _ = shutdown_rx.await;
            },
        ));
        if let Err(e) = served {
            log::error!("gateway terminated: {e}");
        }
    });
    let addr = addr_rx
        .recv_timeout(std::time::Duration::from_secs(10))
        .map_err(|_| Error::InvalidInput("gateway failed to bind".into()))?;
    Ok(RunningGateway {
        addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
