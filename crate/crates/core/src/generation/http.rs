use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Serialize;
use serde_json::Value;

use super::{ChatMessage, ChatRequest, Completer, GenerationError, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { available: Mutex::new(permits), cond: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock();
        while *n == 0 {
            self.cond.wait(&mut n);
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

enum Attempt {
    Done(String),
    Retry(String, Option<Duration>),
    Fail(GenerationError),
}

/// Chat-completion client with exponential backoff and a per-endpoint bound
/// on in-flight requests.
pub struct HttpCompleter {
    client: Client,
    retry: RetryPolicy,
    max_in_flight: usize,
    gates: Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl HttpCompleter {
    pub fn new(retry: RetryPolicy, max_in_flight: usize, timeout: Duration) -> Result<Self, GenerationError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenerationError::Config(format!("http client: {e}")))?;
        Ok(Self { client, retry, max_in_flight: max_in_flight.max(1), gates: Mutex::new(HashMap::new()) })
    }

    fn gate(&self, endpoint: &str) -> Arc<Semaphore> {
        self.gates
            .lock()
            .entry(endpoint.to_owned())
            .or_insert_with(|| Arc::new(Semaphore::new(self.max_in_flight)))
            .clone()
    }

    fn attempt(&self, model: &ModelSpec, token: Option<&str>, body: &Body<'_>) -> Attempt {
        let mut req = self.client.post(&model.endpoint).json(body);
        if let Some(token) = token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(resp) => resp,
            Err(e) => return Attempt::Retry(format!("transport: {e}"), None),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Attempt::Retry(format!("HTTP {}", status.as_u16()), retry_after);
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Attempt::Fail(GenerationError::Http {
                model_id: model.model_id.clone(),
                status: status.as_u16(),
                body: body.chars().take(512).collect(),
            });
        }
        let value: Value = match resp.json() {
            Ok(v) => v,
            Err(e) => return Attempt::Retry(format!("reading body: {e}"), None),
        };
        match value.pointer("/choices/0/message/content") {
            Some(Value::String(text)) if !text.trim().is_empty() => Attempt::Done(text.clone()),
            Some(Value::String(_)) | Some(Value::Null) => {
                Attempt::Fail(GenerationError::EmptyResponse { model_id: model.model_id.clone() })
            }
            _ => Attempt::Fail(GenerationError::Protocol {
                model_id: model.model_id.clone(),
                message: "missing choices[0].message.content".into(),
            }),
        }
    }
}

impl Completer for HttpCompleter {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError> {
        let token = match &model.auth_ref {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenerationError::Config(format!(
                    "credential {var} for model {} is not set in the environment",
                    model.model_id
                ))
            })?),
            None => None,
        };
        let body = Body {
            model: &model.model_id,
            messages: &request.messages,
            temperature: model.sampling.temperature,
            max_tokens: model.sampling.max_tokens,
            seed: request.seed,
        };
        let gate = self.gate(&model.endpoint);
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            let outcome = {
                let _permit = gate.acquire();
                self.attempt(model, token.as_deref(), &body)
            };
            match outcome {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message, retry_after) => {
                    log::debug!("{} attempt {attempt} failed: {message}", model.model_id);
                    last = message;
                    if attempt < self.retry.max_attempts {
                        let wait = retry_after
                            .map(|d| d.min(self.retry.max_delay))
                            .unwrap_or_else(|| self.retry.backoff(attempt));
                        std::thread::sleep(wait);
                    }
                }
            }
        }
        Err(GenerationError::Transient {
            model_id: model.model_id.clone(),
            attempts: self.retry.max_attempts.max(1),
            message: last,
        })
    }
}
