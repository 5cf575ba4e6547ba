use std::collections::BTreeMap;

use super::{ProbabilityVector, Scorer, ScorerError};
use crate::domain::{MythId, VideoRecord};

/// Returns a fixed vector regardless of input, optionally per myth.
#[derive(Debug, Clone)]
pub struct StubScorer {
    default: ProbabilityVector,
    per_myth: BTreeMap<MythId, ProbabilityVector>,
}

impl StubScorer {
    pub fn constant(probs: ProbabilityVector) -> Self {
        Self { default: probs, per_myth: BTreeMap::new() }
    }

    pub fn with_myth(mut self, myth: MythId, probs: ProbabilityVector) -> Self {
        self.per_myth.insert(myth, probs);
        self
    }
}

impl Scorer for StubScorer {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn score(&self, _record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError> {
        Ok(*self.per_myth.get(&myth).unwrap_or(&self.default))
    }
}
