//! Chat-completion backend over HTTP.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::backend::{Backend, BackendError, GenerationRequest, GenerationResponse};

pub const ENV_ENDPOINT: &str = "CONVSHOP_ENDPOINT";
pub const ENV_API_KEY: &str = "CONVSHOP_API_KEY";
pub const ENV_MODEL: &str = "CONVSHOP_MODEL";
const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON POST. Non-2xx statuses are returned, not raised.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &Value) -> Result<HttpReply, BackendError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &Value) -> Result<HttpReply, BackendError> {
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        };
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .send_json(body)
            .map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpReply { status, body })
    }
}

/// Exponential backoff without jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(16),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Caps the number of requests in flight across all episodes.
pub struct InFlightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        InFlightLimiter {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let need = |k: &str| {
            get(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| BackendError::MissingCredential(k.to_string()))
        };
        Ok(RemoteConfig {
            endpoint: need(ENV_ENDPOINT)?,
            api_key: need(ENV_API_KEY)?,
            model: get(ENV_MODEL).unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        })
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    transport: Arc<dyn Transport>,
    limiter: InFlightLimiter,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let transport = Arc::new(UreqTransport::new(config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: RemoteConfig, transport: Arc<dyn Transport>) -> Self {
        let limiter = InFlightLimiter::new(config.max_in_flight);
        RemoteBackend {
            config,
            transport,
            limiter,
        }
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": request.messages,
            "seed": request.params.seed,
            "max_tokens": request.params.max_length,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let reply = {
            let _permit = self.limiter.acquire();
            self.transport.post_json(&self.config.endpoint, &self.config.api_key, body)?
        };
        match reply.status {
            200..=299 => parse_completion(&reply.body),
            429 => Err(BackendError::RateLimited),
            status => Err(BackendError::Http {
                status,
                body: reply.body.chars().take(500).collect(),
            }),
        }
    }
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn model(&self) -> Option<&str> {
        Some(&self.config.model)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        if request.messages.is_empty() {
            return Err(BackendError::EmptyMessages);
        }
        let body = self.body(request);
        let start = Instant::now();
        let max = self.config.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(GenerationResponse {
                        text,
                        attempts: attempt,
                        model: Some(self.config.model.clone()),
                        latency_ms: Some(start.elapsed().as_millis() as u64),
                    })
                }
                Err(e) if e.is_retryable() => {
                    if attempt >= max {
                        return Err(BackendError::Exhausted {
                            attempts: attempt,
                            last: Box::new(e),
                        });
                    }
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.config.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::backend::{ChatMessage, GenerationParams, TurnSpec};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Mutex<Vec<Result<HttpReply, BackendError>>>,
        calls: AtomicUsize,
        seen: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpReply, BackendError>>) -> Self {
            replies.reverse();
            Scripted {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: &str, body: &Value) -> Result<HttpReply, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(body.clone());
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn ok(text: &str) -> Result<HttpReply, BackendError> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, BackendError> {
        Ok(HttpReply {
            status: code,
            body: "{}".into(),
        })
    }

    fn config() -> RemoteConfig {
        let mut c = RemoteConfig::from_lookup(|k| match k {
            ENV_ENDPOINT => Some("http://localhost/v1/chat/completions".into()),
            ENV_API_KEY => Some("k".into()),
            _ => None,
        })
        .unwrap();
        c.retry.base_delay = Duration::ZERO;
        c.retry.max_attempts = 3;
        c
    }

    fn request() -> GenerationRequest {
        GenerationRequest {
            messages: vec![ChatMessage::user("hi")],
            params: GenerationParams { seed: 9, max_length: 64 },
            turn: TurnSpec::Free,
        }
    }

    #[test]
    fn rate_limit_is_retried() {
        let t = Arc::new(Scripted::new(vec![status(429), ok("hello")]));
        let b = RemoteBackend::with_transport(config(), t.clone());
        let r = b.generate(&request()).unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.attempts, 2);
        assert_eq!(r.model.as_deref(), Some("gpt-4"));
        assert!(r.latency_ms.is_some());
        let body = &t.seen.lock().unwrap()[0];
        assert_eq!(body["seed"], 9);
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn errors_are_distinct() {
        let b = RemoteBackend::with_transport(config(), Arc::new(Scripted::new(vec![status(429); 3])));
        match b.generate(&request()) {
            Err(BackendError::Exhausted { attempts: 3, last }) => assert_eq!(*last, BackendError::RateLimited),
            other => panic!("{other:?}"),
        }
        let b = RemoteBackend::with_transport(config(), Arc::new(Scripted::new(vec![Err(BackendError::Timeout), ok("x")])));
        assert_eq!(b.generate(&request()).unwrap().attempts, 2);
        let t = Arc::new(Scripted::new(vec![status(401)]));
        let b = RemoteBackend::with_transport(config(), t.clone());
        assert!(matches!(b.generate(&request()), Err(BackendError::Http { status: 401, .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        let b = RemoteBackend::with_transport(config(), Arc::new(Scripted::new(vec![status(200)])));
        assert!(matches!(b.generate(&request()), Err(BackendError::InvalidResponse(_))));
    }

    #[test]
    fn missing_credential_is_reported() {
        let e = RemoteConfig::from_lookup(|k| (k == ENV_ENDPOINT).then(|| "http://x".to_string())).unwrap_err();
        assert_eq!(e, BackendError::MissingCredential(ENV_API_KEY.into()));
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        let d: Vec<u128> = (1..=5).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(d, [100, 200, 400, 500, 500]);
    }

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(InFlightLimiter::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, peak) = (limiter.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limiter.acquire();
                    peak.fetch_max(limiter.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }
}
