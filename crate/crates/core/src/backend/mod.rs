//! The narrow interface to a vision-language model: next-token logits for
//! `(image, prompt, prefix)`, tokenization, and vocabulary metadata.
//!
//! Implementations live in-process ([`crate::toyvlm::ToyVlm`]) or behind the
//! JSON-over-HTTP protocol ([`HttpBackend`], served by [`server`]).

mod http;
pub mod server;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::imgaug::ImageBuffer;
use crate::toyvlm::{ToyMode, ToyVlm};

pub use self::http::{HttpBackend, RetryPolicy};

/// Env var that overrides the backend endpoint.
pub const BACKEND_URL_ENV: &str = "VACODE_BACKEND_URL";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    /// Transport failure; callers may retry.
    #[error("backend-unavailable: {0}")]
    Unavailable(String),
    #[error("protocol-violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid-token: {0}")]
    InvalidToken(u32),
    #[error("unsupported-prompt: {0}")]
    UnsupportedPrompt(String),
    #[error("backend error: {0}")]
    Other(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }

    /// Recover a typed error from its `Display` form (used across the wire).
    pub fn from_message(message: &str) -> Self {
        let rest = |prefix: &str| {
            message
                .strip_prefix(prefix)
                .map(|s| s.trim_start().to_string())
        };
        if let Some(m) = rest("unsupported-prompt:") {
            BackendError::UnsupportedPrompt(m)
        } else if let Some(m) = rest("invalid-token:") {
            m.parse()
                .map(BackendError::InvalidToken)
                .unwrap_or(BackendError::Other(message.into()))
        } else if let Some(m) = rest("protocol-violation:") {
            BackendError::ProtocolViolation(m)
        } else if let Some(m) = rest("backend-unavailable:") {
            BackendError::Unavailable(m)
        } else {
            BackendError::Other(message.to_string())
        }
    }
}

/// Raw next-token scores. Always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::ProtocolViolation("empty logit vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BackendError::ProtocolViolation(format!(
                "non-finite logit {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Multiply every entry by `factor` (e.g. `1 / temperature`).
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), BackendError> {
        match self.0.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(BackendError::InvalidToken(id)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub vocab_size: usize,
    /// End-of-sequence id, when the backend advertises one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
    /// `in-process:<name>` or the base URL; not part of the wire format.
    #[serde(skip)]
    pub endpoint: String,
}

pub trait Backend: Send + Sync {
    fn info(&self) -> Result<BackendDescriptor, BackendError>;

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError>;

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError>;

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        (**self).info()
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        (**self).next_logits(image, prompt, prefix)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        (**self).tokenize(text)
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        (**self).detokenize(ids)
    }
}

/// Wraps a backend and counts `next_logits` calls.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        self.inner.info()
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.next_logits(image, prompt, prefix)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        self.inner.detokenize(ids)
    }
}

/// A question plus optional lettered options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<(String, String)>,
}

impl Question {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            options: Vec::new(),
        }
    }

    pub fn with_options(text: impl Into<String>, options: Vec<(String, String)>) -> Self {
        Self {
            text: text.into(),
            options,
        }
    }

    pub fn is_mcq(&self) -> bool {
        !self.options.is_empty()
    }
}

impl From<&str> for Question {
    fn from(text: &str) -> Self {
        Question::new(text)
    }
}

/// How a [`Question`] becomes the prompt string sent to the backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub open_instruction: String,
    pub mcq_instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            open_instruction: "Answer the question using a single word or phrase.".into(),
            mcq_instruction: "Answer with the option's letter from the given choices directly."
                .into(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, question: &Question) -> String {
        let mut out = question.text.trim().to_string();
        for (letter, text) in &question.options {
            out.push('\n');
            out.push_str(&format!("{letter}. {text}"));
        }
        out.push('\n');
        if question.is_mcq() {
            out.push_str(&self.mcq_instruction);
        } else {
            out.push_str(&self.open_instruction);
        }
        out
    }
}

/// Resolve an endpoint string: `in-process:toy`, `in-process:toy-hard`, or
/// an `http://` base URL.
pub fn open_backend(endpoint: &str) -> Result<Arc<dyn Backend>, BackendError> {
    match endpoint {
        "in-process:toy" => Ok(Arc::new(ToyVlm::new(ToyMode::Normal))),
        "in-process:toy-hard" => Ok(Arc::new(ToyVlm::new(ToyMode::Hard))),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Ok(Arc::new(HttpBackend::new(url)?))
        }
        other => Err(BackendError::Other(format!(
            "unrecognized backend endpoint {other:?}"
        ))),
    }
}
