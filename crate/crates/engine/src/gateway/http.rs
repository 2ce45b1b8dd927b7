//! Blocking HTTP transport with retries, an in-flight limit, and a shared
//! counter of network attempts.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;

use crate::config::ToolConfig;

#[derive(Debug, Clone)]
pub struct HttpError {
    pub retryable: bool,
    pub status: Option<u16>,
    pub message: String,
}

impl std::fmt::Display for HttpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            Some(s) => write!(f, "HTTP {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Counting semaphore bounding concurrent requests on one endpoint.
#[derive(Debug)]
pub struct Limiter {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        while *used >= self.max {
            used = self.freed.wait(used).unwrap_or_else(|p| p.into_inner());
        }
        *used += 1;
        Permit(self)
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|p| p.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    counter: Arc<AtomicU64>,
    limiter: Limiter,
    max_retries: u32,
    backoff: Duration,
}

impl HttpTransport {
    pub fn new(cfg: &ToolConfig, counter: Arc<AtomicU64>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            counter,
            limiter: Limiter::new(cfg.max_inflight),
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.retry_backoff_ms),
        }
    }

    pub fn calls(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T, HttpError>) -> Result<T, HttpError> {
        let mut n = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.counter.fetch_add(1, Ordering::SeqCst);
                attempt()
            };
            match result {
                Err(e) if e.retryable && n < self.max_retries => {
                    std::thread::sleep(self.backoff * 2u32.pow(n));
                    n += 1;
                }
                other => return other,
            }
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>, HttpError> {
        let resp = resp.map_err(|e| HttpError {
            retryable: true,
            status: None,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp.into_body().read_to_vec().map_err(|e| HttpError {
            retryable: true,
            status: Some(status),
            message: e.to_string(),
        })?;
        if (200..300).contains(&status) {
            return Ok(body);
        }
        Err(HttpError {
            retryable: status == 429 || status >= 500,
            status: Some(status),
            message: String::from_utf8_lossy(&body).chars().take(300).collect(),
        })
    }

    fn parse_json(body: &[u8]) -> Result<Value, HttpError> {
        serde_json::from_slice(body).map_err(|e| HttpError {
            retryable: false,
            status: None,
            message: format!("response is not JSON: {e}"),
        })
    }

    pub fn get_json(
        &self,
        url: &str,
        query: &[(&str, &str)],
        headers: &[(&str, String)],
    ) -> Result<Value, HttpError> {
        let body = self.with_retries(|| {
            let mut req = self.agent.get(url);
            for (k, v) in query {
                req = req.query(*k, *v);
            }
            for (k, v) in headers {
                req = req.header(*k, v.as_str());
            }
            Self::finish(req.call())
        })?;
        Self::parse_json(&body)
    }

    pub fn post_json(
        &self,
        url: &str,
        payload: &Value,
        headers: &[(&str, String)],
    ) -> Result<Value, HttpError> {
        let body = self.with_retries(|| {
            let mut req = self.agent.post(url);
            for (k, v) in headers {
                req = req.header(*k, v.as_str());
            }
            Self::finish(req.send_json(payload))
        })?;
        Self::parse_json(&body)
    }

    pub fn get_bytes(&self, url: &str) -> Result<Vec<u8>, HttpError> {
        self.with_retries(|| Self::finish(self.agent.get(url).call()))
    }
}
