use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ProbabilityVector, Scorer, ScorerError, SIMPLEX_TOLERANCE};
use crate::domain::{MythId, StanceLabel, VideoRecord};
use crate::seeding::SeedMixer;

/// Lower bound for the argmax mass; keeps the emitted argmax on the sampled class.
const MIN_CONFIDENCE: f64 = 1.0 / 3.0 + 1e-6;

/// Parameters of the gold-driven stand-in for a trained local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedScorerSpec {
    /// Row = gold class, column = predicted class distribution.
    pub confusion: [[f64; 3]; 3],
    pub confidence_when_correct: f64,
    pub confidence_when_wrong: f64,
    pub seed: u64,
    /// Half-width of uniform jitter added to the argmax mass.
    #[serde(default)]
    pub confidence_jitter: f64,
    /// Half-width of per-component uniform noise in stochastic passes.
    #[serde(default)]
    pub dropout_noise: f64,
}

impl SimulatedScorerSpec {
    pub fn identity(confidence: f64, seed: u64) -> Self {
        Self {
            confusion: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            confidence_when_correct: confidence,
            confidence_when_wrong: confidence,
            seed,
            confidence_jitter: 0.0,
            dropout_noise: 0.0,
        }
    }

    /// Confusion with `accuracy` on the diagonal and the rest split evenly.
    pub fn diagonal(accuracy: f64, confidence_when_correct: f64, confidence_when_wrong: f64, seed: u64) -> Self {
        let off = (1.0 - accuracy) / 2.0;
        let mut confusion = [[off; 3]; 3];
        for (i, row) in confusion.iter_mut().enumerate() {
            row[i] = accuracy;
        }
        Self {
            confusion,
            confidence_when_correct,
            confidence_when_wrong,
            seed,
            confidence_jitter: 0.0,
            dropout_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        for (i, row) in self.confusion.iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(ScorerError::InvalidSpec(format!("confusion row {i} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(ScorerError::InvalidSpec(format!("confusion row {i} sums to {sum}")));
            }
        }
        for (name, c) in [
            ("confidence_when_correct", self.confidence_when_correct),
            ("confidence_when_wrong", self.confidence_when_wrong),
        ] {
            if !(c > 1.0 / 3.0 && c <= 1.0) {
                return Err(ScorerError::InvalidSpec(format!("{name} = {c} outside (1/3, 1]")));
            }
        }
        if self.confidence_jitter < 0.0 || self.dropout_noise < 0.0 {
            return Err(ScorerError::InvalidSpec("jitter and noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples a predicted class from the confusion row of each item's gold class.
#[derive(Debug, Clone)]
pub struct SimulatedScorer {
    spec: SimulatedScorerSpec,
    gold: BTreeMap<(String, MythId), StanceLabel>,
}

impl SimulatedScorer {
    pub fn new(spec: SimulatedScorerSpec, gold: BTreeMap<(String, MythId), StanceLabel>) -> Result<Self, ScorerError> {
        spec.validate()?;
        Ok(Self { spec, gold })
    }

    pub fn spec(&self) -> &SimulatedScorerSpec {
        &self.spec
    }

    fn base_vector(&self, record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError> {
        let gold = *self
            .gold
            .get(&(record.video_id.clone(), myth))
            .ok_or_else(|| ScorerError::MissingGold { video_id: record.video_id.clone(), myth })?;
        let mut rng = SeedMixer::new(self.spec.seed).str(&record.video_id).u64(u64::from(myth.index())).rng();

        let row = &self.spec.confusion[gold.index()];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut predicted = 2;
        for (i, &w) in row.iter().enumerate() {
            acc += w;
            if u < acc {
                predicted = i;
                break;
            }
        }
        // guard against a trailing zero-mass column absorbing rounding slack
        while row[predicted] == 0.0 && predicted > 0 {
            predicted -= 1;
        }

        let base = if predicted == gold.index() {
            self.spec.confidence_when_correct
        } else {
            self.spec.confidence_when_wrong
        };
        let jitter = if self.spec.confidence_jitter > 0.0 {
            rng.gen_range(-self.spec.confidence_jitter..=self.spec.confidence_jitter)
        } else {
            0.0
        };
        let mass = (base + jitter).clamp(MIN_CONFIDENCE, 1.0);
        let rest = (1.0 - mass) / 2.0;
        let mut p = [rest; 3];
        p[predicted] = mass;
        ProbabilityVector::normalized(p).map_err(|e| ScorerError::MalformedResponse(e.to_string()))
    }
}

impl Scorer for SimulatedScorer {
    fn name(&self) -> &'static str {
        "simulated"
    }

    fn score(&self, record: &VideoRecord, myth: MythId) -> Result<ProbabilityVector, ScorerError> {
        self.base_vector(record, myth)
    }

    fn score_stochastic(
        &self,
        record: &VideoRecord,
        myth: MythId,
        passes: usize,
        seed: u64,
    ) -> Result<Vec<ProbabilityVector>, ScorerError> {
        let base = self.base_vector(record, myth)?;
        let noise = self.spec.dropout_noise;
        (0..passes)
            .map(|pass| {
                if noise == 0.0 {
                    return Ok(base);
                }
                let mut rng = SeedMixer::new(seed)
                    .str(&record.video_id)
                    .u64(u64::from(myth.index()))
                    .u64(pass as u64)
                    .rng();
                let p = base.as_array().map(|x| x + rng.gen_range(-noise..=noise));
                ProbabilityVector::normalized(p).or(Ok(base))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold_for(n: usize, myth: MythId) -> (Vec<VideoRecord>, BTreeMap<(String, MythId), StanceLabel>) {
        let records: Vec<_> = (0..n).map(|i| VideoRecord::new(format!("v{i}"), "", "")).collect();
        let gold = records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.video_id.clone(), myth), StanceLabel::ALL[i % 3]))
            .collect();
        (records, gold)
    }

    #[test]
    fn identity_confusion_one_hot() {
        let m = MythId::new(1).unwrap();
        let (records, gold) = gold_for(30, m);
        let s = SimulatedScorer::new(SimulatedScorerSpec::identity(1.0, 3), gold.clone()).unwrap();
        for r in &records {
            let g = gold[&(r.video_id.clone(), m)];
            assert_eq!(s.score(r, m).unwrap(), ProbabilityVector::one_hot(g));
        }
    }

    #[test]
    fn identity_confusion_point_nine() {
        let m = MythId::new(2).unwrap();
        let (records, gold) = gold_for(9, m);
        let s = SimulatedScorer::new(SimulatedScorerSpec::identity(0.9, 3), gold.clone()).unwrap();
        for r in &records {
            let g = gold[&(r.video_id.clone(), m)];
            let p = s.score(r, m).unwrap();
            assert!((p.get(g) - 0.9).abs() < 1e-12);
            for other in StanceLabel::ALL.into_iter().filter(|&c| c != g) {
                assert!((p.get(other) - 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_confusion_accuracy_near_one_third() {
        let m = MythId::new(1).unwrap();
        let (records, gold) = gold_for(3000, m);
        let spec = SimulatedScorerSpec::diagonal(1.0 / 3.0, 0.6, 0.6, 11);
        let s = SimulatedScorer::new(spec, gold.clone()).unwrap();
        let correct = records
            .iter()
            .filter(|r| s.score(r, m).unwrap().argmax() == gold[&(r.video_id.clone(), m)])
            .count();
        let acc = correct as f64 / 3000.0;
        assert!((0.30..=0.37).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn missing_gold_is_typed() {
        let s = SimulatedScorer::new(SimulatedScorerSpec::identity(0.9, 0), BTreeMap::new()).unwrap();
        let r = VideoRecord::new("x", "", "");
        assert!(matches!(s.score(&r, MythId::new(1).unwrap()), Err(ScorerError::MissingGold { .. })));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = SimulatedScorerSpec::identity(0.9, 0);
        spec.confusion[1] = [0.5, 0.6, 0.0];
        assert!(SimulatedScorer::new(spec, BTreeMap::new()).is_err());
        let spec = SimulatedScorerSpec::identity(0.3, 0);
        assert!(SimulatedScorer::new(spec, BTreeMap::new()).is_err());
    }

    #[test]
    fn stochastic_passes_reproducible() {
        let m = MythId::new(1).unwrap();
        let (records, gold) = gold_for(3, m);
        let mut spec = SimulatedScorerSpec::diagonal(0.7, 0.8, 0.5, 5);
        let zero = SimulatedScorer::new(spec.clone(), gold.clone()).unwrap();
        let one = zero.score_stochastic(&records[0], m, 1, 9).unwrap();
        assert_eq!(one, vec![zero.score(&records[0], m).unwrap()]);

        spec.dropout_noise = 0.1;
        let noisy = SimulatedScorer::new(spec, gold).unwrap();
        let a = noisy.score_stochastic(&records[1], m, 20, 42).unwrap();
        let b = noisy.score_stochastic(&records[1], m, 20, 42).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }
}
