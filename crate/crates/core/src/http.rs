//! Blocking JSON-over-HTTP with bounded retries, shared by the remote
//! generation and embedding clients.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request to {url} failed after {attempts} attempts: {last}")]
    Exhausted {
        url: String,
        attempts: u32,
        last: String,
    },
    #[error("request to {url} rejected with HTTP {status}: {body}")]
    Rejected {
        url: String,
        status: u16,
        body: String,
    },
    #[error("response from {url} is not JSON: {reason}")]
    NotJson { url: String, reason: String },
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

/// Total attempts and the first backoff delay; delay doubles after each failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(
        timeout: Duration,
        retry: RetryPolicy,
        bearer: Option<String>,
    ) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HttpError::Client(e.to_string()))?;
        Ok(Self {
            client,
            retry,
            bearer,
        })
    }

    /// POSTs `body`, retrying transport errors, 429 and 5xx. Other 4xx fail at once.
    pub fn post(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay_before(attempt - 1));
            }
            let mut req = self.client.post(url).json(body);
            if let Some(token) = &self.bearer {
                req = req.bearer_auth(token);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("POST {url} attempt {}: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            if status.is_success() {
                return serde_json::from_str(&text).map_err(|e| HttpError::NotJson {
                    url: url.to_string(),
                    reason: e.to_string(),
                });
            }
            if status.is_server_error() || status.as_u16() == 429 {
                log::debug!("POST {url} attempt {}: HTTP {status}", attempt + 1);
                last = format!("HTTP {status}");
                continue;
            }
            return Err(HttpError::Rejected {
                url: url.to_string(),
                status: status.as_u16(),
                body: text,
            });
        }
        Err(HttpError::Exhausted {
            url: url.to_string(),
            attempts,
            last,
        })
    }
}

/// Reads a token from the named environment variable, if set and non-empty.
pub fn token_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}
