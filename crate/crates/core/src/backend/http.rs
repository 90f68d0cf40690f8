use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError, LogitVector, TokenSequence};
use crate::imgaug::ImageBuffer;

pub(crate) const LOGITS_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct LogitsRequest {
    pub image_png_b64: String,
    pub prompt: String,
    pub prefix_ids: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct LogitsResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TokenizeResponse {
    pub ids: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DetokenizeRequest {
    pub ids: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ErrorBody {
    pub error: String,
}

/// Exponential backoff applied to transport failures only.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

/// Client for a remote logit server.
///
/// `detokenize` uses the optional `/v1/detokenize` route; servers that do not
/// expose it fall back to inverting earlier `tokenize` results, which covers
/// the answer words the harness tokenizes up front.
pub struct HttpBackend {
    base: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    info: OnceLock<BackendDescriptor>,
    seen_tokens: Mutex<HashMap<u32, String>>,
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        Self::with_retry(base_url, RetryPolicy::default())
    }

    pub fn with_retry(base_url: &str, retry: RetryPolicy) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(LOGITS_TIMEOUT)
            .build()
            .map_err(|e| BackendError::Other(format!("building http client: {e}")))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            client,
            retry,
            info: OnceLock::new(),
            seen_tokens: Mutex::new(HashMap::new()),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn send<F>(&self, build: F) -> Result<reqwest::blocking::Response, BackendError>
    where
        F: Fn() -> reqwest::blocking::RequestBuilder,
    {
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            match build().send() {
                Ok(resp) => return Ok(resp),
                Err(e) if attempt < self.retry.retries => {
                    log_retry(&e, attempt);
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(BackendError::Unavailable(e.to_string())),
            }
        }
    }

    fn decode_json<T: for<'de> Deserialize<'de>>(
        resp: reqwest::blocking::Response,
    ) -> Result<T, BackendError> {
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| BackendError::Unavailable(format!("reading response: {e}")))?;
        if !status.is_success() {
            let message = serde_json::from_str::<ErrorBody>(&body)
                .map(|b| b.error)
                .unwrap_or_else(|_| format!("HTTP {status}: {body}"));
            return Err(match BackendError::from_message(&message) {
                BackendError::Other(m) if status.is_server_error() => BackendError::Unavailable(m),
                e => e,
            });
        }
        serde_json::from_str(&body)
            .map_err(|e| BackendError::ProtocolViolation(format!("bad response body: {e}")))
    }

    fn descriptor(&self) -> Result<&BackendDescriptor, BackendError> {
        if let Some(d) = self.info.get() {
            return Ok(d);
        }
        let resp = self.send(|| self.client.get(self.url("/v1/info")))?;
        let mut d: BackendDescriptor = Self::decode_json(resp)?;
        if d.vocab_size < 2 {
            return Err(BackendError::ProtocolViolation(format!(
                "vocab_size {} < 2",
                d.vocab_size
            )));
        }
        d.endpoint = self.base.clone();
        Ok(self.info.get_or_init(|| d))
    }
}

fn log_retry(e: &reqwest::Error, attempt: u32) {
    if std::env::var_os("VACODE_LOG_RETRIES").is_some() {
        eprintln!("backend request failed (attempt {}): {e}", attempt + 1);
    }
}

impl Backend for HttpBackend {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        self.descriptor().cloned()
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        let vocab = self.descriptor()?.vocab_size;
        let png = image
            .encode_png()
            .map_err(|e| BackendError::Other(e.to_string()))?;
        let body = LogitsRequest {
            image_png_b64: BASE64.encode(png),
            prompt: prompt.to_string(),
            prefix_ids: prefix.ids().to_vec(),
        };
        let resp = self.send(|| self.client.post(self.url("/v1/logits")).json(&body))?;
        let out: LogitsResponse = Self::decode_json(resp)?;
        if out.logits.len() != vocab {
            return Err(BackendError::ProtocolViolation(format!(
                "expected {vocab} logits, got {}",
                out.logits.len()
            )));
        }
        LogitVector::new(out.logits)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        let vocab = self.descriptor()?.vocab_size;
        let body = TokenizeRequest {
            text: text.to_string(),
        };
        let resp = self.send(|| self.client.post(self.url("/v1/tokenize")).json(&body))?;
        let out: TokenizeResponse = Self::decode_json(resp)?;
        let seq = TokenSequence(out.ids);
        seq.validate(vocab)
            .map_err(|e| BackendError::ProtocolViolation(format!("tokenize returned {e}")))?;
        if let [id] = seq.ids() {
            self.seen_tokens
                .lock()
                .unwrap()
                .insert(*id, text.to_string());
        }
        Ok(seq)
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        ids.validate(self.descriptor()?.vocab_size)?;
        let body = DetokenizeRequest {
            ids: ids.ids().to_vec(),
        };
        let resp = self.send(|| self.client.post(self.url("/v1/detokenize")).json(&body))?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            let seen = self.seen_tokens.lock().unwrap();
            let words: Result<Vec<&str>, _> = ids
                .ids()
                .iter()
                .map(|id| {
                    seen.get(id)
                        .map(String::as_str)
                        .ok_or(BackendError::InvalidToken(*id))
                })
                .collect();
            return Ok(words?.join(" "));
        }
        let out: DetokenizeResponse = Self::decode_json(resp)?;
        Ok(out.text)
    }
}
