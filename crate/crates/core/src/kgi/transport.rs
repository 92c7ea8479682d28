//! HTTP GET plumbing shared by the networked backends: a rate-limited reqwest
//! transport and a content-addressed on-disk response cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use super::KgError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    /// Logical operation name, part of the cache key (`sparql`, `search`, `lookup`, ...).
    pub operation: String,
    pub url: String,
    pub query: Vec<(String, String)>,
    pub accept: String,
}

impl HttpRequest {
    pub fn new(operation: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            operation: operation.into(),
            url: url.into(),
            query: Vec::new(),
            accept: "application/json".into(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.query.push((key.into(), value.into()));
        self
    }

    pub fn accept(mut self, accept: impl Into<String>) -> Self {
        self.accept = accept.into();
        self
    }

    /// Stable key over `(namespace, operation, url, sorted query)`.
    pub fn cache_key(&self, namespace: &str) -> String {
        let mut params = self.query.clone();
        params.sort();
        let mut hasher = Sha256::new();
        for part in [namespace, &self.operation, &self.url] {
            hasher.update(part.as_bytes());
            hasher.update([0]);
        }
        for (k, v) in &params {
            hasher.update(k.as_bytes());
            hasher.update([b'=']);
            hasher.update(v.trim().as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())
    }
}

pub trait Transport: Send + Sync {
    fn get(&self, request: &HttpRequest) -> Result<String, KgError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn get(&self, request: &HttpRequest) -> Result<String, KgError> {
        (**self).get(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn get(&self, request: &HttpRequest) -> Result<String, KgError> {
        (**self).get(request)
    }
}

/// Token bucket; `acquire` blocks until a token is available.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            per_second: per_second.max(f64::MIN_POSITIVE),
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.burst);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Blocking reqwest transport with a per-backend rate limit and retry on
/// transient failures (connection errors, 429, 5xx).
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    max_attempts: u32,
}

impl ReqwestTransport {
    pub fn new(user_agent: &str, requests_per_second: f64) -> Result<Self, KgError> {
        if user_agent.trim().is_empty() {
            return Err(KgError::Config("a user agent is required".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent)
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| KgError::Config(e.to_string()))?;
        Ok(Self {
            client,
            limiter: RateLimiter::new(requests_per_second, 1),
            max_attempts: 3,
        })
    }

    fn attempt(&self, request: &HttpRequest) -> Result<String, (KgError, bool)> {
        self.limiter.acquire();
        let response = self
            .client
            .get(&request.url)
            .query(&request.query)
            .header(reqwest::header::ACCEPT, request.accept.as_str())
            .send()
            .map_err(|e| (KgError::Unreachable(e.to_string()), true))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| (KgError::Unreachable(e.to_string()), true))?;
        if status.is_success() {
            Ok(body)
        } else if status.as_u16() == 404 {
            Err((KgError::UnknownEntity(request.url.clone()), false))
        } else {
            let retry = status.as_u16() == 429 || status.is_server_error();
            Err((
                KgError::Unreachable(format!("{} returned {status}", request.url)),
                retry,
            ))
        }
    }
}

impl Transport for ReqwestTransport {
    fn get(&self, request: &HttpRequest) -> Result<String, KgError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(body) => return Ok(body),
                Err((err, true)) if attempt + 1 < self.max_attempts => {
                    let delay = Duration::from_millis(500 << attempt);
                    warn!(attempt, ?delay, error = %err, "retrying knowledge graph request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }
}

/// Serves repeated requests from files under `dir/<namespace>/`. No eviction;
/// see [`purge_cache`].
pub struct CachedTransport<T> {
    inner: T,
    dir: PathBuf,
    namespace: String,
}

impl<T: Transport> CachedTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>, namespace: impl Into<String>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            namespace: namespace.into(),
        }
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&self.namespace).join(&key[..2]).join(key)
    }
}

impl<T: Transport> Transport for CachedTransport<T> {
    fn get(&self, request: &HttpRequest) -> Result<String, KgError> {
        let key = request.cache_key(&self.namespace);
        let path = self.path_for(&key);
        if let Ok(body) = fs::read_to_string(&path) {
            debug!(operation = %request.operation, %key, "cache hit");
            return Ok(body);
        }
        let body = self.inner.get(request)?;
        if let Err(err) = write_atomically(&path, &body) {
            warn!(path = %path.display(), error = %err, "could not write cache entry");
        }
        Ok(body)
    }
}

fn write_atomically(path: &Path, body: &str) -> std::io::Result<()> {
    let parent = path.parent().expect("cache path has a parent");
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(body.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Delete every cached response. Returns the number of files removed.
pub fn purge_cache(dir: impl AsRef<Path>) -> std::io::Result<usize> {
    let dir = dir.as_ref();
    if !dir.exists() {
        return Ok(0);
    }
    let mut removed = 0;
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                stack.push(entry.path());
            } else {
                removed += 1;
            }
        }
    }
    fs::remove_dir_all(dir)?;
    Ok(removed)
}
