//! JSON-over-HTTP plumbing shared by the remote embedder and chat backend.

use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub bearer: Option<String>,
    pub body: serde_json::Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self
            .client
            .post(&request.url)
            .timeout(request.timeout)
            .json(&request.body);
        if let Some(token) = &request.bearer {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CallError {
    #[error("remote unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("remote rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
}

/// Posts with exponential backoff on timeouts, connection errors, 429 and 5xx.
/// Returns the successful response and the number of attempts made.
pub fn post_with_retry(
    transport: &dyn HttpTransport,
    request: &HttpRequest,
    policy: &RetryPolicy,
) -> Result<(HttpResponse, u32), CallError> {
    let max = policy.max_attempts.max(1);
    let mut last = CallError::Unavailable {
        attempts: 0,
        last: "no attempt made".into(),
    };
    for attempt in 1..=max {
        if attempt > 1 {
            std::thread::sleep(policy.base_delay * 2u32.pow(attempt - 2));
        }
        match transport.post_json(request) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok((resp, attempt)),
            Ok(resp) if resp.status == 429 => {
                tracing::warn!(attempt, "rate limited");
                last = CallError::RateLimited { attempts: attempt };
            }
            Ok(resp) if resp.status >= 500 => {
                tracing::warn!(attempt, status = resp.status, "server error");
                last = CallError::Unavailable {
                    attempts: attempt,
                    last: format!("HTTP {}", resp.status),
                };
            }
            Ok(resp) => {
                return Err(CallError::Rejected {
                    status: resp.status,
                    body: resp.body,
                })
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "transport error");
                last = CallError::Unavailable {
                    attempts: attempt,
                    last: e.to_string(),
                };
            }
        }
    }
    Err(last)
}

/// Test transport: records every request and answers from a queue, falling
/// back to a fixed responder once the queue is empty.
pub struct CapturingTransport {
    requests: Mutex<Vec<HttpRequest>>,
    queued: Mutex<std::collections::VecDeque<Result<HttpResponse, TransportError>>>,
    #[allow(clippy::type_complexity)]
    responder: Box<dyn Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync>,
}

impl CapturingTransport {
    pub fn new(
        responder: impl Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            requests: Mutex::new(Vec::new()),
            queued: Mutex::new(Default::default()),
            responder: Box::new(responder),
        }
    }

    pub fn enqueue(&self, response: Result<HttpResponse, TransportError>) {
        self.queued.lock().unwrap().push_back(response);
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl HttpTransport for CapturingTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests.lock().unwrap().push(request.clone());
        if let Some(r) = self.queued.lock().unwrap().pop_front() {
            return r;
        }
        (self.responder)(request)
    }
}
