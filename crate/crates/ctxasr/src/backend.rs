//! HTTP text-completion backend plus a retry wrapper with exponential
//! backoff. The request/response shape is a minimal JSON contract:
//! request `{"model": …, "prompt": …}`, response `{"completion": …}`.

use std::thread;
use std::time::Duration;

use ctxasr_core::descgen::{BackendError, CompletionBackend};

pub const API_KEY_ENV: &str = "CTXASR_API_KEY";

pub struct HttpBackend {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            url: url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let key = self
            .api_key
            .as_ref()
            .ok_or_else(|| BackendError::Unavailable(format!("{API_KEY_ENV} is not set")))?;
        let response = self
            .agent
            .post(&self.url)
            .set("authorization", &format!("Bearer {key}"))
            .send_json(serde_json::json!({ "model": self.model, "prompt": prompt }))
            .map_err(|e| BackendError::RetriesExhausted {
                attempts: 1,
                last: e.to_string(),
            })?;
        let body: serde_json::Value =
            response
                .into_json()
                .map_err(|e| BackendError::RetriesExhausted {
                    attempts: 1,
                    last: e.to_string(),
                })?;
        body.get("completion")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::RetriesExhausted {
                attempts: 1,
                last: "response missing completion field".into(),
            })
    }
}

/// Retry an inner backend up to `attempts` times with exponential backoff
/// starting at `initial_backoff`.
pub struct Retrying<B> {
    inner: B,
    attempts: usize,
    initial_backoff: Duration,
}

impl<B> Retrying<B> {
    pub fn new(inner: B) -> Self {
        Retrying {
            inner,
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }

    pub fn with_policy(inner: B, attempts: usize, initial_backoff: Duration) -> Self {
        Retrying {
            inner,
            attempts,
            initial_backoff,
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for Retrying<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.inner.complete(prompt) {
                Ok(text) => return Ok(text),
                // no key / no backend is permanent; retrying won't help
                Err(e @ BackendError::Unavailable(_)) => return Err(e),
                Err(e) => {
                    last = e.to_string();
                    if attempt < self.attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts: self.attempts as u32,
            last,
        })
    }
}
