//! HTTP interrogation of model endpoints and the resulting transcripts.
//!
//! Wire protocol: `POST {base_url}/generate` with
//! `{"prompt": .., "max_tokens": .., "seed": ..}` answers `{"text": ..}`,
//! optionally authenticated with `Authorization: Bearer <token>`.
//! Transcripts are JSON lines, one record per (model, query).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{Query, QueryCorpus};
use crate::exec::{with_threads, Execution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Base,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub model_id: String,
    pub kind: ModelKind,
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// Entry of the `GET /models` listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub kind: ModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before retry `k` (0-based) is `base_delay * 2^k`.
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1 << retry.min(20))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Generation parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterrogationConfig {
    pub max_tokens: usize,
    pub seed: u64,
    /// Drop a verbatim echo of the prompt from the start of responses.
    pub strip_prompt_prefix: bool,
}

impl Default for InterrogationConfig {
    fn default() -> Self {
        InterrogationConfig {
            max_tokens: 30,
            seed: 0,
            strip_prompt_prefix: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub model_id: String,
    pub model_kind: ModelKind,
    pub query_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    #[serde(rename = "response")]
    pub response_text: String,
    pub latency_ms: u64,
    #[serde(rename = "ts")]
    pub timestamp: DateTime<Utc>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Records keyed and ordered by `(model_id, query_id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranscriptStore {
    records: BTreeMap<(String, String), TranscriptRecord>,
}

impl TranscriptStore {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Result<Self> {
        let mut store = TranscriptStore::default();
        for record in records {
            store.insert(record)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, record: TranscriptRecord) -> Result<()> {
        let key = (record.model_id.clone(), record.query_id.clone());
        if self.records.contains_key(&key) {
            return Err(Error::DuplicateId(format!("{}/{}", key.0, key.1)));
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn get(&self, model_id: &str, query_id: &str) -> Option<&TranscriptRecord> {
        self.records.get(&(model_id.to_string(), query_id.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = &TranscriptRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct model ids in lexicographic order, optionally of one kind.
    pub fn model_ids(&self, kind: Option<ModelKind>) -> Vec<String> {
        let mut ids: Vec<String> = self
            .records()
            .filter(|r| kind.is_none_or(|k| r.model_kind == k))
            .map(|r| r.model_id.clone())
            .collect();
        ids.dedup();
        ids
    }

    /// Sub-store of the records of one kind.
    pub fn of_kind(&self, kind: ModelKind) -> TranscriptStore {
        TranscriptStore {
            records: self
                .records
                .iter()
                .filter(|(_, r)| r.model_kind == kind)
                .map(|(k, r)| (k.clone(), r.clone()))
                .collect(),
        }
    }

    /// JSON lines of every record without latency and timestamp, for
    /// comparing stores collected by different means.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in self.records() {
            let line = serde_json::json!({
                "model_id": r.model_id,
                "model_kind": r.model_kind,
                "query_id": r.query_id,
                "query": r.query_text,
                "response": r.response_text,
                "failed": r.failed,
                "reason": r.reason,
            });
            out.extend_from_slice(line.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    }
}

pub fn save_store(store: &TranscriptStore, path: &Path) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for record in store.records() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_store(path: &Path) -> Result<TranscriptStore> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut store = TranscriptStore::default();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        store.insert(record)?;
    }
    Ok(store)
}

/// Fetches the `GET /models` listing of a server.
pub fn list_models(server_url: &str, timeout: Duration) -> Result<Vec<ModelDescriptor>> {
    let url = format!("{}/models", server_url.trim_end_matches('/'));
    let response = ureq::AgentBuilder::new()
        .timeout(timeout)
        .build()
        .get(&url)
        .call()
        .map_err(|e| Error::Server(format!("{url}: {e}")))?;
    let body = response
        .into_string()
        .map_err(|e| Error::io(format!("reading {url}"), e))?;
    serde_json::from_str(&body).map_err(|e| Error::Protocol(format!("{url}: {e}")))
}

enum CallError {
    Failed(String),
    Protocol(String),
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            );
        }
        source = e.source();
    }
    false
}

/// HTTP client with retries and an in-memory transcript cache.
///
/// A cached `(model_id, query_id)` is answered without touching the network,
/// failed records included, so re-running a collection is free.
pub struct Interrogator {
    agent: ureq::Agent,
    policy: RetryPolicy,
    config: InterrogationConfig,
    cache: Mutex<HashMap<(String, String), TranscriptRecord>>,
    misses: AtomicUsize,
    requests: AtomicUsize,
}

impl Interrogator {
    pub fn new(config: InterrogationConfig, policy: RetryPolicy) -> Self {
        Interrogator {
            agent: ureq::AgentBuilder::new().timeout(policy.timeout).build(),
            policy,
            config,
            cache: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
        }
    }

    /// Seeds the cache with previously collected transcripts.
    pub fn warm(&self, store: &TranscriptStore) {
        let mut cache = self.cache.lock().expect("cache lock");
        for record in store.records() {
            cache.insert(
                (record.model_id.clone(), record.query_id.clone()),
                record.clone(),
            );
        }
    }

    /// Interrogations that missed the cache; the query budget spent.
    pub fn queries_sent(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// HTTP requests issued, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn interrogate(&self, endpoint: &ModelEndpoint, query: &Query) -> Result<TranscriptRecord> {
        let key = (endpoint.model_id.clone(), query.id.clone());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);

        let timestamp = Utc::now();
        let started = Instant::now();
        let (response_text, failed, reason) = match self.call(endpoint, &query.text) {
            Ok(text) => (text, false, None),
            Err(CallError::Failed(reason)) => (String::new(), true, Some(reason)),
            Err(CallError::Protocol(message)) => return Err(Error::Protocol(message)),
        };
        let record = TranscriptRecord {
            model_id: endpoint.model_id.clone(),
            model_kind: endpoint.kind,
            query_id: query.id.clone(),
            query_text: query.text.clone(),
            response_text,
            latency_ms: started.elapsed().as_millis() as u64,
            timestamp,
            failed,
            reason,
        };
        // A concurrent call may have won the race; keep the first record.
        let mut cache = self.cache.lock().expect("cache lock");
        Ok(cache.entry(key).or_insert(record).clone())
    }

    fn call(&self, endpoint: &ModelEndpoint, prompt: &str) -> Result<String, CallError> {
        let url = format!("{}/generate", endpoint.base_url.trim_end_matches('/'));
        let body = GenerateRequest {
            prompt: prompt.to_string(),
            max_tokens: self.config.max_tokens,
            seed: self.config.seed,
        };
        let mut last = String::new();
        for attempt in 0..self.policy.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.policy.delay(attempt - 1));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut request = self.agent.post(&url);
            if let Some(token) = &endpoint.auth_token {
                request = request.set("Authorization", &format!("Bearer {token}"));
            }
            match request.send_json(&body) {
                Ok(response) => {
                    let raw = response
                        .into_string()
                        .map_err(|e| CallError::Failed(format!("reading body: {e}")))?;
                    let parsed: GenerateResponse = serde_json::from_str(&raw)
                        .map_err(|e| CallError::Protocol(format!("{url}: {e}")))?;
                    let mut text = parsed.text;
                    if self.config.strip_prompt_prefix {
                        if let Some(rest) = text.strip_prefix(prompt) {
                            text = rest.trim_start().to_string();
                        }
                    }
                    return Ok(text);
                }
                Err(ureq::Error::Status(code, _)) if code >= 500 => {
                    last = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(CallError::Failed(format!("HTTP {code}")));
                }
                Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                    last = format!("timeout: {t}");
                }
                Err(ureq::Error::Transport(t)) => return Err(CallError::Failed(t.to_string())),
            }
        }
        Err(CallError::Failed(format!(
            "{last} after {} attempts",
            self.policy.max_attempts
        )))
    }

    /// One record per (endpoint, query), with at most `parallelism`
    /// requests in flight. The result does not depend on completion order.
    pub fn interrogate_all(
        &self,
        endpoints: &[ModelEndpoint],
        corpus: &QueryCorpus,
        parallelism: usize,
    ) -> Result<TranscriptStore> {
        if endpoints.is_empty() {
            return Err(Error::invalid("no endpoints"));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        let mut ids = HashSet::new();
        for e in endpoints {
            if !ids.insert(e.model_id.as_str()) {
                return Err(Error::DuplicateId(e.model_id.clone()));
            }
        }

        let jobs: Vec<(&ModelEndpoint, &Query)> = endpoints
            .iter()
            .flat_map(|e| corpus.queries().iter().map(move |q| (e, q)))
            .collect();
        let records = with_threads(parallelism, || {
            Execution::Parallel.map(&jobs, |&(endpoint, query)| {
                self.interrogate(endpoint, query)
                    .unwrap_or_else(|e| TranscriptRecord {
                        model_id: endpoint.model_id.clone(),
                        model_kind: endpoint.kind,
                        query_id: query.id.clone(),
                        query_text: query.text.clone(),
                        response_text: String::new(),
                        latency_ms: 0,
                        timestamp: Utc::now(),
                        failed: true,
                        reason: Some(e.to_string()),
                    })
            })
        });
        TranscriptStore::from_records(records)
    }
}
