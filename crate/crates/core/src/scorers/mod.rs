//! Scoring interface over 3-class probability outputs and its implementations.
//!
//! Local scorers implement [`Scorer`]; the expensive labeler implements
//! [`Oracle`]. Every scorer must be callable concurrently.

mod oracle;
mod remote;
mod replay;
pub mod replay_server;
mod simulated;
mod stub;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MythId, StanceLabel, VideoRecord};

pub use oracle::{
    parse_oracle_response, HttpOracle, HttpOracleConfig, Oracle, OracleError, OracleRequest, OracleVerdict,
    ReplayOracle, StanceJudge, TokenUsage, JUDGE_MYTH_INDEX,
};
pub use remote::{RemoteScorer, RemoteScorerConfig};
pub use replay::{ReplayFixture, ReplayScorer};
pub use simulated::{SimulatedScorer, SimulatedScorerSpec};
pub use stub::StubScorer;

/// Tolerance for the simplex sum check.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("no fixture for video {video_id:?} myth {myth}")]
    MissingFixture { video_id: String, myth: MythId },
    #[error("no gold label for video {video_id:?} myth {myth}")]
    MissingGold { video_id: String, myth: MythId },
    #[error("stochastic scoring is not supported by the {0} scorer")]
    UnsupportedMode(&'static str),
    #[error("invalid scorer configuration: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbabilityError {
    #[error("component {index} = {value} outside [0,1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("components sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("cannot normalize a zero or non-finite vector")]
    Degenerate,
}

/// A distribution over (Oppose, Neither, Support).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ProbabilityVector([f64; 3]);

impl ProbabilityVector {
    pub fn new(p: [f64; 3]) -> Result<Self, ProbabilityError> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(ProbabilityError::OutOfRange { index, value });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ProbabilityError::NotNormalized(sum));
        }
        Ok(Self(p))
    }

    /// Clamp negatives to zero and rescale to unit mass.
    pub fn normalized(p: [f64; 3]) -> Result<Self, ProbabilityError> {
        let clamped = p.map(|x| if x.is_finite() { x.max(0.0) } else { f64::NAN });
        let sum: f64 = clamped.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(ProbabilityError::Degenerate);
        }
        Ok(Self(clamped.map(|x| x / sum)))
    }

    pub fn one_hot(label: StanceLabel) -> Self {
        let mut p = [0.0; 3];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn get(&self, label: StanceLabel) -> f64 {
        self.0[label.index()]
    }

    /// Most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> StanceLabel {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        StanceLabel::from_index(best).expect("index < 3")
    }

    /// Maximum softmax probability.
    pub fn max(&self) -> f64 {
        self.0[self.argmax().index()]
    }
}

impl TryFrom<[f64; 3]> for ProbabilityVector {
    type Error = ProbabilityError;

    fn try_from(p: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<ProbabilityVector> for [f64; 3] {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    LocalScorer,
    Oracle,
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            PredictionSource::LocalScorer => "local_scorer",
            PredictionSource::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub myth: MythId,
    pub label: StanceLabel,
    pub probs: ProbabilityVector,
    pub source: PredictionSource,
}

impl Prediction {
    pub fn local(video_id: impl Into<String>, myth: MythId, probs: ProbabilityVector) -> Self {
        Self { video_id: video_id.into(), myth, label: probs.argmax(), probs, source: PredictionSource::LocalScorer }
    }

    pub fn oracle(video_id: impl Into<String>, myth: MythId, label: StanceLabel) -> Self {
        Self {
            video_id: video_id.into(),
            myth,
            label,
            probs: ProbabilityVector::one_hot(label),
            source: PredictionSource::Oracle,
        }
    }
}

/// A cheap local model producing class probabilities.
pub trait Scorer: Send + Sync {
    /// Short identifier used in fingerprints and error messages.
    fn name(&self) -> &'static str;

    fn score(&self, record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError>;

    /// `passes` stochastic forward passes, reproducible for a fixed seed.
    fn score_stochastic(
        &self,
        _record: &VideoRecord,
        _myth: MythId,
        _passes: usize,
        _seed: u64,
    ) -> Result<Vec<ProbabilityVector>, ScorerError> {
        Err(ScorerError::UnsupportedMode(self.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_break_prefers_lowest_index() {
        let p = ProbabilityVector::new([0.4, 0.4, 0.2]).unwrap();
        assert_eq!(p.argmax(), StanceLabel::Oppose);
        assert_eq!(ProbabilityVector::uniform().argmax(), StanceLabel::Oppose);
        let p = ProbabilityVector::new([0.2, 0.4, 0.4]).unwrap();
        assert_eq!(p.argmax(), StanceLabel::Neither);
    }

    #[test]
    fn rejects_off_simplex() {
        assert!(matches!(ProbabilityVector::new([0.5, 0.5, 0.1]), Err(ProbabilityError::NotNormalized(_))));
        assert!(matches!(ProbabilityVector::new([1.2, -0.2, 0.0]), Err(ProbabilityError::OutOfRange { .. })));
        assert!(serde_json::from_str::<ProbabilityVector>("[0.2,0.2,0.2]").is_err());
        let p: ProbabilityVector = serde_json::from_str("[0.2,0.7,0.1]").unwrap();
        assert_eq!(p.argmax(), StanceLabel::Neither);
    }

    #[test]
    fn normalization() {
        let p = ProbabilityVector::normalized([2.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.as_array(), [0.5, 0.25, 0.25]);
        assert!(ProbabilityVector::normalized([0.0, -1.0, 0.0]).is_err());
    }
}
