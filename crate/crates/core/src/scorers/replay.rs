use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProbabilityVector, Scorer, ScorerError};
use crate::domain::{MythId, VideoRecord};

/// One line of a scorer replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub video_id: String,
    pub myth_index: MythId,
    pub probs: ProbabilityVector,
    /// Stored stochastic passes, consumed in order by `score_stochastic`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub passes: Vec<ProbabilityVector>,
}

/// Answers from a recorded fixture file; a pure function of that file.
#[derive(Debug, Clone, Default)]
pub struct ReplayScorer {
    entries: BTreeMap<(String, MythId), ReplayFixture>,
}

impl ReplayScorer {
    pub fn from_fixtures(fixtures: impl IntoIterator<Item = ReplayFixture>) -> Self {
        let entries = fixtures
            .into_iter()
            .map(|f| ((f.video_id.clone(), f.myth_index), f))
            .collect();
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScorerError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| ScorerError::ScorerUnavailable(format!("{}: {e}", path.display())))?;
        let mut fixtures = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ScorerError::MalformedResponse(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let fx: ReplayFixture = serde_json::from_str(&line)
                .map_err(|e| ScorerError::MalformedResponse(format!("line {}: {e}", i + 1)))?;
            fixtures.push(fx);
        }
        Ok(Self::from_fixtures(fixtures))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry(&self, record: &VideoRecord, myth: MythId) -> Result<&ReplayFixture, ScorerError> {
        self.entries
            .get(&(record.video_id.clone(), myth))
            .ok_or_else(|| ScorerError::MissingFixture { video_id: record.video_id.clone(), myth })
    }
}

impl Scorer for ReplayScorer {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn score(&self, record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError> {
        Ok(self.entry(record, myth)?.probs)
    }

    fn score_stochastic(
        &self,
        record: &VideoRecord,
        myth: MythId,
        passes: usize,
        _seed: u64,
    ) -> Result<Vec<ProbabilityVector>, ScorerError> {
        let entry = self.entry(record, myth)?;
        if entry.passes.len() < passes {
            return Err(ScorerError::MalformedResponse(format!(
                "fixture for {:?} {myth} stores {} passes, {passes} requested",
                record.video_id,
                entry.passes.len()
            )));
        }
        Ok(entry.passes[..passes].to_vec())
    }
}
