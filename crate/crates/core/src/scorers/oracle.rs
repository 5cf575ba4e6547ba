//! Client side of the oracle labeling protocol.
//!
//! Request: `POST` a JSON [`OracleRequest`]. Response:
//! `{"LABEL": -1|0|1, "EXCERPTS": [..], "JUSTIFICATION": "..", "usage": {"input_tokens": n, "output_tokens": n}}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::domain::{Myth, MythId, StanceLabel, VideoRecord};

/// `myth_index` used for overall-stance judge requests.
pub const JUDGE_MYTH_INDEX: u8 = 0;

const JUDGE_DEFINITION: &str = "Assign one overall stance toward the myths, given the per-myth labels.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle unreachable: {0}")]
    OracleUnreachable(String),
    #[error("oracle returned label {0}, expected one of -1, 0, 1")]
    OracleBadLabel(i64),
    #[error("oracle returned malformed JSON: {0}")]
    OracleBadJson(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub label: StanceLabel,
    pub excerpts: Vec<String>,
    pub justification: String,
    pub token_usage: TokenUsage,
    pub latency_seconds: f64,
}

/// Body of an oracle request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub video_id: String,
    pub myth_index: u8,
    pub myth_definition: String,
    pub title: String,
    pub description: String,
    pub transcript: String,
    pub tags: Vec<String>,
    pub shots: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Per-myth labels, sent only with judge requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub myth_labels: Option<BTreeMap<MythId, StanceLabel>>,
}

impl OracleRequest {
    pub fn for_myth(record: &VideoRecord, myth: &Myth, shots: u32) -> Self {
        Self {
            video_id: record.video_id.clone(),
            myth_index: myth.id.index(),
            myth_definition: myth.definition.clone(),
            title: record.title.clone(),
            description: record.description.clone(),
            transcript: record.transcript.clone(),
            tags: record.tags.clone(),
            shots,
            temperature: None,
            myth_labels: None,
        }
    }

    pub fn for_judge(record: &VideoRecord, labels: &BTreeMap<MythId, StanceLabel>, shots: u32) -> Self {
        Self {
            video_id: record.video_id.clone(),
            myth_index: JUDGE_MYTH_INDEX,
            myth_definition: JUDGE_DEFINITION.to_string(),
            title: record.title.clone(),
            description: record.description.clone(),
            transcript: record.transcript.clone(),
            tags: record.tags.clone(),
            shots,
            temperature: None,
            myth_labels: Some(labels.clone()),
        }
    }
}

/// Parse a response object. Latency is filled in by the caller.
pub fn parse_oracle_response(value: &Value) -> Result<OracleVerdict, OracleError> {
    let obj = value.as_object().ok_or_else(|| OracleError::OracleBadJson("expected an object".into()))?;
    let raw_label = obj.get("LABEL").ok_or_else(|| OracleError::OracleBadJson("missing LABEL".into()))?;
    let label_value = match raw_label {
        Value::Number(n) => n.as_i64().ok_or_else(|| OracleError::OracleBadJson(format!("LABEL {n} is not an integer")))?,
        Value::String(s) => s
            .trim()
            .parse::<i64>()
            .map_err(|_| OracleError::OracleBadJson(format!("LABEL {s:?} is not an integer")))?,
        other => return Err(OracleError::OracleBadJson(format!("LABEL has type {other}"))),
    };
    let label = StanceLabel::from_value(label_value).ok_or(OracleError::OracleBadLabel(label_value))?;
    let excerpts = match obj.get("EXCERPTS") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| OracleError::OracleBadJson("EXCERPTS must hold strings".into())))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(OracleError::OracleBadJson("EXCERPTS must be an array".into())),
    };
    let justification = match obj.get("JUSTIFICATION") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(OracleError::OracleBadJson("JUSTIFICATION must be a string".into())),
    };
    let token_usage = match obj.get("usage") {
        None | Some(Value::Null) => TokenUsage::default(),
        Some(u) => serde_json::from_value(u.clone()).map_err(|e| OracleError::OracleBadJson(format!("usage: {e}")))?,
    };
    Ok(OracleVerdict { label, excerpts, justification, token_usage, latency_seconds: 0.0 })
}

/// The expensive labeler.
pub trait Oracle: Send + Sync {
    fn name(&self) -> &'static str;
    fn label(&self, record: &VideoRecord, myth: &Myth) -> Result<OracleVerdict, OracleError>;
}

/// Resolves an item's overall stance from its per-myth labels.
pub trait StanceJudge: Send + Sync {
    fn judge(&self, record: &VideoRecord, labels: &BTreeMap<MythId, StanceLabel>) -> Result<OracleVerdict, OracleError>;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InflightGate {
    available: Mutex<usize>,
    freed: Condvar,
}

struct InflightPermit<'a>(&'a InflightGate);

impl InflightGate {
    fn new(cap: usize) -> Self {
        Self { available: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> InflightPermit<'_> {
        let mut n = self.available.lock().expect("gate poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n -= 1;
        InflightPermit(self)
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("gate poisoned") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    /// Sent as `Authorization: Bearer <token>` when set.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub shots: u32,
    /// Passed through opaquely to the server.
    pub temperature: Option<f64>,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_inflight: usize,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            token: None,
            shots: 5,
            temperature: Some(0.2),
            max_attempts: 3,
            initial_backoff_ms: 1000,
            timeout_ms: 60_000,
            max_inflight: 4,
        }
    }
}

/// JSON-over-HTTP oracle client with retries and an in-flight cap.
#[derive(Debug)]
pub struct HttpOracle {
    config: HttpOracleConfig,
    agent: ureq::Agent,
    gate: InflightGate,
}

enum Attempt {
    Done(Value),
    Transient(String),
    Fatal(OracleError),
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        let gate = InflightGate::new(config.max_inflight);
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &HttpOracleConfig {
        &self.config
    }

    fn attempt(&self, body: &OracleRequest) -> Attempt {
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => match resp.into_json::<Value>() {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(OracleError::OracleBadJson(e.to_string())),
            },
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Attempt::Transient(format!("HTTP {code}"))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Attempt::Fatal(OracleError::OracleUnreachable(format!("HTTP {code}: {}", text.trim())))
            }
            Err(ureq::Error::Transport(t)) => Attempt::Transient(t.to_string()),
        }
    }

    fn send(&self, mut body: OracleRequest) -> Result<OracleVerdict, OracleError> {
        body.temperature = self.config.temperature;
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Attempt::Done(value) => {
                    let mut verdict = parse_oracle_response(&value)?;
                    verdict.latency_seconds = started.elapsed().as_secs_f64();
                    return Ok(verdict);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => {
                    warn!(video_id = %body.video_id, myth = body.myth_index, attempt, error = %msg, "oracle request failed");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(OracleError::OracleUnreachable(format!("{attempts} attempts failed; last error: {last}")))
    }
}

impl Oracle for HttpOracle {
    fn name(&self) -> &'static str {
        "http"
    }

    fn label(&self, record: &VideoRecord, myth: &Myth) -> Result<OracleVerdict, OracleError> {
        self.send(OracleRequest::for_myth(record, myth, self.config.shots))
    }
}

impl StanceJudge for HttpOracle {
    fn judge(&self, record: &VideoRecord, labels: &BTreeMap<MythId, StanceLabel>) -> Result<OracleVerdict, OracleError> {
        self.send(OracleRequest::for_judge(record, labels, self.config.shots))
    }
}

/// Oracle answering from recorded responses keyed by (video_id, myth_index).
///
/// Fixture lines carry `video_id`, `myth_index` and the response keys
/// (`LABEL`, `EXCERPTS`, `JUSTIFICATION`, `usage`). Index 0 holds judge verdicts.
#[derive(Debug, Default)]
pub struct ReplayOracle {
    responses: BTreeMap<(String, u8), Value>,
    hits: AtomicUsize,
}

impl ReplayOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, video_id: impl Into<String>, myth_index: u8, response: Value) {
        self.responses.insert((video_id.into(), myth_index), response);
    }

    pub fn insert_verdict(&mut self, video_id: impl Into<String>, myth_index: u8, label: StanceLabel, usage: TokenUsage) {
        let response = serde_json::json!({
            "LABEL": label.value(),
            "EXCERPTS": [],
            "JUSTIFICATION": "",
            "usage": usage,
        });
        self.insert_raw(video_id, myth_index, response);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| OracleError::OracleUnreachable(format!("{}: {e}", path.display())))?;
        let mut out = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| OracleError::OracleBadJson(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let (video_id, myth_index, response) =
                split_fixture_line(&line).map_err(|e| OracleError::OracleBadJson(format!("line {}: {e}", i + 1)))?;
            out.insert_raw(video_id, myth_index, response);
        }
        Ok(out)
    }

    /// Raw fixture map, e.g. for serving over HTTP.
    pub fn responses(&self) -> &BTreeMap<(String, u8), Value> {
        &self.responses
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    fn lookup(&self, video_id: &str, myth_index: u8) -> Result<OracleVerdict, OracleError> {
        self.hits.fetch_add(1, Ordering::SeqCst);
        let value = self.responses.get(&(video_id.to_string(), myth_index)).ok_or_else(|| {
            OracleError::OracleUnreachable(format!("no replay fixture for {video_id:?} myth {myth_index}"))
        })?;
        parse_oracle_response(value)
    }
}

/// Split a fixture line into its key and the response object.
pub(crate) fn split_fixture_line(line: &str) -> Result<(String, u8, Value), String> {
    let mut value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object_mut().ok_or("expected an object")?;
    let video_id = obj
        .remove("video_id")
        .and_then(|v| v.as_str().map(str::to_owned))
        .ok_or("missing video_id")?;
    let myth_index = obj
        .remove("myth_index")
        .and_then(|v| v.as_u64())
        .filter(|&i| i <= u64::from(MythId::MAX))
        .ok_or("missing or invalid myth_index")? as u8;
    Ok((video_id, myth_index, value))
}

impl Oracle for ReplayOracle {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn label(&self, record: &VideoRecord, myth: &Myth) -> Result<OracleVerdict, OracleError> {
        self.lookup(&record.video_id, myth.id.index())
    }
}

impl StanceJudge for ReplayOracle {
    fn judge(&self, record: &VideoRecord, _labels: &BTreeMap<MythId, StanceLabel>) -> Result<OracleVerdict, OracleError> {
        self.lookup(&record.video_id, JUDGE_MYTH_INDEX)
    }
}
