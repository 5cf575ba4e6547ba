use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ProbabilityVector, Scorer, ScorerError};
use crate::domain::{truncate_text, MythId, VideoRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteScorerConfig {
    pub endpoint: String,
    pub max_tokens: usize,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self { endpoint: String::new(), max_tokens: 1024, timeout_ms: 30_000, max_attempts: 3, initial_backoff_ms: 1000 }
    }
}

/// Local model served over HTTP.
///
/// Request: `{"video_id", "myth_index", "text"}` plus `"passes"` and `"seed"`
/// for stochastic scoring. Response: `{"probs": [o, n, s]}` or
/// `{"samples": [[o, n, s], ...]}`.
#[derive(Debug)]
pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        Self { config, agent }
    }

    fn post(&self, body: &Value) -> Result<Value, ScorerError> {
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.agent.post(&self.config.endpoint).send_json(body) {
                Ok(resp) => {
                    return resp.into_json::<Value>().map_err(|e| ScorerError::MalformedResponse(e.to_string()));
                }
                Err(ureq::Error::Status(code, _)) if code < 500 && code != 429 => {
                    return Err(ScorerError::MalformedResponse(format!("HTTP {code}")));
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(ScorerError::ScorerUnavailable(last))
    }

    fn request(&self, record: &VideoRecord, myth: MythId) -> Value {
        json!({
            "video_id": record.video_id,
            "myth_index": myth.index(),
            "text": truncate_text(record, self.config.max_tokens),
        })
    }
}

fn parse_vector(v: &Value) -> Result<ProbabilityVector, ScorerError> {
    let arr: [f64; 3] = serde_json::from_value(v.clone()).map_err(|e| ScorerError::MalformedResponse(e.to_string()))?;
    ProbabilityVector::new(arr).map_err(|e| ScorerError::MalformedResponse(e.to_string()))
}

impl Scorer for RemoteScorer {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn score(&self, record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError> {
        let resp = self.post(&self.request(record, myth))?;
        parse_vector(resp.get("probs").ok_or_else(|| ScorerError::MalformedResponse("missing probs".into()))?)
    }

    fn score_stochastic(
        &self,
        record: &VideoRecord,
        myth: MythId,
        passes: usize,
        seed: u64,
    ) -> Result<Vec<ProbabilityVector>, ScorerError> {
        let mut body = self.request(record, myth);
        body["passes"] = json!(passes);
        body["seed"] = json!(seed);
        let resp = self.post(&body)?;
        let samples = resp
            .get("samples")
            .and_then(Value::as_array)
            .ok_or_else(|| ScorerError::MalformedResponse("missing samples".into()))?;
        if samples.len() != passes {
            return Err(ScorerError::MalformedResponse(format!("expected {passes} samples, got {}", samples.len())));
        }
        samples.iter().map(parse_vector).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::replay_server::ReplayServer;

    fn cfg(url: &str) -> RemoteScorerConfig {
        RemoteScorerConfig { endpoint: url.into(), initial_backoff_ms: 1, timeout_ms: 2_000, ..Default::default() }
    }

    #[test]
    fn scores_over_http() {
        let server = ReplayServer::start("127.0.0.1:0", |body| {
            if let Some(n) = body.get("passes").and_then(Value::as_u64) {
                let samples: Vec<_> = (0..n).map(|_| json!([0.1, 0.2, 0.7])).collect();
                (200, json!({ "samples": samples }))
            } else {
                assert!(body["text"].as_str().unwrap().starts_with("title"));
                (200, json!({"probs": [0.2, 0.7, 0.1]}))
            }
        })
        .unwrap();
        let s = RemoteScorer::new(cfg(server.url()));
        let r = VideoRecord::new("a", "title here", "desc");
        let m = MythId::new(1).unwrap();
        assert_eq!(s.score(&r, m).unwrap().as_array(), [0.2, 0.7, 0.1]);
        assert_eq!(s.score_stochastic(&r, m, 4, 1).unwrap().len(), 4);
    }

    #[test]
    fn malformed_and_unavailable() {
        let server = ReplayServer::start("127.0.0.1:0", |_| (200, json!({"probs": [0.9, 0.9, 0.9]}))).unwrap();
        let s = RemoteScorer::new(cfg(server.url()));
        let r = VideoRecord::new("a", "t", "d");
        let m = MythId::new(1).unwrap();
        assert!(matches!(s.score(&r, m), Err(ScorerError::MalformedResponse(_))));

        let dead = RemoteScorer::new(RemoteScorerConfig { timeout_ms: 300, ..cfg("http://127.0.0.1:9/") });
        assert!(matches!(dead.score(&r, m), Err(ScorerError::ScorerUnavailable(_))));
    }
}
