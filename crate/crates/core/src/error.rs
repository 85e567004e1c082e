//! Crate-wide error type.

use crate::decode::Generation;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A distribution with no finite entry cannot be normalized or argmaxed.
    #[error("degenerate distribution: no finite entries")]
    DegenerateDistribution,

    /// Vocabularies (or vector lengths standing in for them) disagree.
    #[error("vocabulary incompatibility at position {position}: {detail}")]
    VocabIncompatible { position: usize, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed file contents, with the best location available.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Structurally valid file that violates a schema rule.
    #[error("schema violation in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("timeout talking to {endpoint} after {attempts} attempt(s)")]
    Timeout { endpoint: String, attempts: u32 },

    #[error("http status {status} from {endpoint}")]
    HttpStatus { endpoint: String, status: u16 },

    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    /// Response arrived but does not follow the wire protocol.
    #[error("protocol violation from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    /// A named backend failed; wraps the underlying error.
    #[error("backend '{name}' failed: {source}")]
    Backend {
        name: String,
        #[source]
        source: Box<Error>,
    },

    /// Generation aborted mid-way; the partial output is kept for diagnostics.
    #[error("generation failed after {} token(s): {source}", partial.tokens.len())]
    Generation {
        partial: Box<Generation>,
        #[source]
        source: Box<Error>,
    },

    /// Generate-mode answer extraction found no option label.
    #[error("no option label found in generation for item {item_id}")]
    UnparseableAnswer { item_id: String },

    #[error("could not perturb answer for item {item_id} after {attempts} attempt(s)")]
    Perturbation { item_id: String, attempts: u32 },

    #[error("could not generate a valid context for item {item_id} after {attempts} attempt(s)")]
    ContextGeneration { item_id: String, attempts: u32 },

    #[error("assembly error: {0}")]
    Assembly(String),

    /// Failure reported by a generation/frequency client.
    #[error("client error: {0}")]
    Client(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse class used for process exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad data: malformed files, schema violations, invalid values.
    Data,
    /// Remote trouble: network, timeouts, protocol, backend failures.
    Backend,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Timeout { .. }
            | Error::HttpStatus { .. }
            | Error::Transport { .. }
            | Error::Protocol { .. }
            | Error::Client(_) => ErrorClass::Backend,
            Error::Backend { source, .. } => source.class(),
            Error::Generation { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Innermost error after stripping `Backend`/`Generation` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Backend { source, .. } => source.root(),
            Error::Generation { source, .. } => source.root(),
            other => other,
        }
    }

    /// Name of the failing backend, if any wrapper recorded one.
    pub fn backend_name(&self) -> Option<&str> {
        match self {
            Error::Backend { name, .. } => Some(name),
            Error::Generation { source, .. } => source.backend_name(),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
