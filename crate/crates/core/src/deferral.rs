//! Deferral rules and their calibration on a labelled validation split.
//!
//! A prediction is deferred to the oracle when:
//! - MSP: its maximum class probability is below `msp_threshold`;
//! - VET: its predicted class is in the low-F1 class set;
//! - MSP+VET: either of the above holds;
//! - softmax / MC-dropout entropy: the entropy exceeds `entropy_threshold`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::StanceLabel;
use crate::metrics::{ConfusionMatrix, EmptyClassPolicy, MetricError};
use crate::scorers::{Prediction, ProbabilityVector};

/// ln 3, the entropy of the uniform 3-class distribution.
pub const MAX_ENTROPY: f64 = 1.098_612_288_668_109_8;

/// Two retained-F1 values closer than this are treated as tied.
pub const F1_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeferralError {
    #[error("length mismatch: {preds} predictions vs {gold} gold labels")]
    LengthMismatch { preds: usize, gold: usize },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("no samples")]
    EmptySamples,
    #[error("VET cutoff {0} outside (0, 1]")]
    InvalidCutoff(f64),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid calibration grid step {0}")]
    InvalidGrid(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeferralMode {
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "vet")]
    Vet,
    #[serde(rename = "msp+vet")]
    MspPlusVet,
    #[serde(rename = "softmax_entropy")]
    SoftmaxEntropy,
    #[serde(rename = "mc_dropout")]
    McDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Retain,
    Defer,
}

impl Decision {
    pub fn is_defer(self) -> bool {
        self == Decision::Defer
    }

    fn from_defer(defer: bool) -> Self {
        if defer {
            Decision::Defer
        } else {
            Decision::Retain
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferralReason {
    Msp,
    Vet,
    Both,
    Entropy,
}

/// Calibrated configuration for one myth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralPolicy {
    pub mode: DeferralMode,
    #[serde(default)]
    pub msp_threshold: f64,
    #[serde(default)]
    pub vet_low_classes: BTreeSet<StanceLabel>,
    #[serde(default)]
    pub entropy_threshold: f64,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
    #[serde(default = "default_vet_cutoff")]
    pub vet_f1_cutoff: f64,
    /// Compare entropy divided by ln 3 instead of raw nats.
    #[serde(default)]
    pub entropy_normalized: bool,
}

fn default_mc_passes() -> usize {
    20
}

fn default_vet_cutoff() -> f64 {
    0.8
}

impl DeferralPolicy {
    pub fn new(mode: DeferralMode) -> Self {
        Self {
            mode,
            msp_threshold: 0.0,
            vet_low_classes: BTreeSet::new(),
            entropy_threshold: MAX_ENTROPY,
            mc_passes: default_mc_passes(),
            vet_f1_cutoff: default_vet_cutoff(),
            entropy_normalized: false,
        }
    }

    pub fn msp(threshold: f64) -> Self {
        Self { msp_threshold: threshold, ..Self::new(DeferralMode::Msp) }
    }

    pub fn msp_plus_vet(threshold: f64, low: impl IntoIterator<Item = StanceLabel>) -> Self {
        Self {
            msp_threshold: threshold,
            vet_low_classes: low.into_iter().collect(),
            ..Self::new(DeferralMode::MspPlusVet)
        }
    }

    pub fn validate(&self) -> Result<(), DeferralError> {
        if !(0.0..=1.0).contains(&self.msp_threshold) {
            return Err(DeferralError::InvalidPolicy(format!("msp_threshold {} outside [0,1]", self.msp_threshold)));
        }
        if !(self.entropy_threshold >= 0.0) {
            return Err(DeferralError::InvalidPolicy("entropy_threshold must be non-negative".into()));
        }
        if self.mc_passes == 0 {
            return Err(DeferralError::InvalidPolicy("mc_passes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn needs_mc_samples(&self) -> bool {
        self.mode == DeferralMode::McDropout
    }

    /// Decide for one local prediction. `mc_samples` is required in
    /// MC-dropout mode and ignored otherwise. Returns the reason when deferred.
    pub fn decide(
        &self,
        probs: &ProbabilityVector,
        mc_samples: Option<&[ProbabilityVector]>,
    ) -> Result<Option<DeferralReason>, DeferralError> {
        let predicted = probs.argmax();
        let reason = match self.mode {
            DeferralMode::Msp => msp_decide(probs, self.msp_threshold).is_defer().then_some(DeferralReason::Msp),
            DeferralMode::Vet => vet_decide(predicted, &self.vet_low_classes)
                .is_defer()
                .then_some(DeferralReason::Vet),
            DeferralMode::MspPlusVet => {
                let m = msp_decide(probs, self.msp_threshold).is_defer();
                let v = vet_decide(predicted, &self.vet_low_classes).is_defer();
                match (m, v) {
                    (true, true) => Some(DeferralReason::Both),
                    (true, false) => Some(DeferralReason::Msp),
                    (false, true) => Some(DeferralReason::Vet),
                    (false, false) => None,
                }
            }
            DeferralMode::SoftmaxEntropy => {
                let h = self.scaled_entropy(entropy(probs));
                (h > self.entropy_threshold).then_some(DeferralReason::Entropy)
            }
            DeferralMode::McDropout => {
                let samples = mc_samples.ok_or(DeferralError::EmptySamples)?;
                let (_, h) = mc_dropout_uncertainty(samples)?;
                (self.scaled_entropy(h) > self.entropy_threshold).then_some(DeferralReason::Entropy)
            }
        };
        Ok(reason)
    }

    fn scaled_entropy(&self, h: f64) -> f64 {
        if self.entropy_normalized {
            h / MAX_ENTROPY
        } else {
            h
        }
    }
}

/// Defer iff the maximum class probability is below `threshold`.
pub fn msp_decide(probs: &ProbabilityVector, threshold: f64) -> Decision {
    Decision::from_defer(probs.max() < threshold)
}

/// Defer iff the predicted class is one of the low-performing classes.
pub fn vet_decide(predicted: StanceLabel, low_classes: &BTreeSet<StanceLabel>) -> Decision {
    Decision::from_defer(low_classes.contains(&predicted))
}

/// MSP or VET.
pub fn combined_decide(probs: &ProbabilityVector, predicted: StanceLabel, policy: &DeferralPolicy) -> Decision {
    Decision::from_defer(
        msp_decide(probs, policy.msp_threshold).is_defer() || vet_decide(predicted, &policy.vet_low_classes).is_defer(),
    )
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn entropy(probs: &ProbabilityVector) -> f64 {
    let h: f64 = probs.as_array().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.clamp(0.0, MAX_ENTROPY)
}

/// Mean of the stochastic passes and the entropy of that mean.
pub fn mc_dropout_uncertainty(samples: &[ProbabilityVector]) -> Result<(ProbabilityVector, f64), DeferralError> {
    if samples.is_empty() {
        return Err(DeferralError::EmptySamples);
    }
    let mut sum = [0.0; 3];
    for s in samples {
        for (acc, p) in sum.iter_mut().zip(s.as_array()) {
            *acc += p;
        }
    }
    let mean = ProbabilityVector::normalized(sum).map_err(|_| DeferralError::EmptySamples)?;
    Ok((mean, entropy(&mean)))
}

/// Classes whose F1 falls below `cutoff`; an undefined F1 counts as 0.
/// No range check on `cutoff`.
pub fn vet_classes_from_f1(per_class_f1: [Option<f64>; 3], cutoff: f64) -> BTreeSet<StanceLabel> {
    StanceLabel::ALL
        .into_iter()
        .filter(|c| per_class_f1[c.index()].unwrap_or(0.0) < cutoff)
        .collect()
}

/// Low-performing classes on the validation split (per-class F1 < `cutoff`).
pub fn compute_vet_classes(
    val_preds: &[Prediction],
    val_gold: &[StanceLabel],
    cutoff: f64,
) -> Result<BTreeSet<StanceLabel>, DeferralError> {
    if val_preds.len() != val_gold.len() {
        return Err(DeferralError::LengthMismatch { preds: val_preds.len(), gold: val_gold.len() });
    }
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(DeferralError::InvalidCutoff(cutoff));
    }
    let mut m = ConfusionMatrix::default();
    for (p, &g) in val_preds.iter().zip(val_gold) {
        m.add(g, p.label);
    }
    let f1 = StanceLabel::ALL.map(|c| m.f1(c));
    Ok(vet_classes_from_f1(f1, cutoff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMetric {
    Msp,
    SoftmaxEntropy,
    /// Entropy of MC-dropout means; pass predictions whose `probs` are the means.
    McEntropy,
}

/// What the sweep maximises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationObjective {
    /// Macro F1 over retained items only.
    RetainedF1,
    /// Macro F1 over all items with deferred items replaced by oracle labels
    /// (gold when `oracle_labels` is None).
    CascadeF1 { oracle_labels: Option<Vec<StanceLabel>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub grid_step: f64,
    /// Sweep entropy over [0,1] after dividing by ln 3, instead of [0, ln 3] nats.
    pub entropy_normalized: bool,
    pub objective: CalibrationObjective,
    pub empty_class: EmptyClassPolicy,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            entropy_normalized: false,
            objective: CalibrationObjective::RetainedF1,
            empty_class: EmptyClassPolicy::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub retained_macro_f1: f64,
    pub deferral_rate: f64,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub metric: CalibrationMetric,
    pub chosen_threshold: f64,
    pub retained_macro_f1: f64,
    pub deferral_rate: f64,
    pub sweep: Vec<SweepPoint>,
}

/// Grid thresholds `0, step, 2·step, …, upper`, computed as `i / n · upper`.
pub fn threshold_grid(step: f64, upper: f64) -> Result<Vec<f64>, DeferralError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(DeferralError::InvalidGrid(step));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| if i == n { upper } else { i as f64 / n as f64 * upper }).collect())
}

impl CalibrationMetric {
    fn score(self, p: &ProbabilityVector, normalized: bool) -> f64 {
        match self {
            CalibrationMetric::Msp => p.max(),
            CalibrationMetric::SoftmaxEntropy | CalibrationMetric::McEntropy => {
                let h = entropy(p);
                if normalized {
                    h / MAX_ENTROPY
                } else {
                    h
                }
            }
        }
    }

    fn defers(self, score: f64, threshold: f64) -> bool {
        match self {
            CalibrationMetric::Msp => score < threshold,
            CalibrationMetric::SoftmaxEntropy | CalibrationMetric::McEntropy => score > threshold,
        }
    }

    fn upper(self, normalized: bool) -> f64 {
        match self {
            CalibrationMetric::Msp => 1.0,
            _ if normalized => 1.0,
            _ => MAX_ENTROPY,
        }
    }
}

/// Grid-search the deferral threshold that maximises macro F1 on the
/// validation split. Ties go to the lower deferral rate, then the lower
/// threshold. A threshold retaining nothing scores 0.
pub fn calibrate_threshold(
    val_preds: &[Prediction],
    val_gold: &[StanceLabel],
    metric: CalibrationMetric,
    options: &CalibrationOptions,
) -> Result<CalibrationReport, DeferralError> {
    if val_preds.len() != val_gold.len() {
        return Err(DeferralError::LengthMismatch { preds: val_preds.len(), gold: val_gold.len() });
    }
    if val_preds.is_empty() {
        return Err(DeferralError::EmptyValidation);
    }
    if let CalibrationObjective::CascadeF1 { oracle_labels: Some(o) } = &options.objective {
        if o.len() != val_gold.len() {
            return Err(DeferralError::LengthMismatch { preds: o.len(), gold: val_gold.len() });
        }
    }
    let scores: Vec<f64> = val_preds.iter().map(|p| metric.score(&p.probs, options.entropy_normalized)).collect();
    let grid = threshold_grid(options.grid_step, metric.upper(options.entropy_normalized))?;
    let n = val_preds.len();

    let sweep = grid
        .into_iter()
        .map(|threshold| {
            let mut m = ConfusionMatrix::default();
            let mut retained = 0;
            for (i, (p, &g)) in val_preds.iter().zip(val_gold).enumerate() {
                let deferred = metric.defers(scores[i], threshold);
                if !deferred {
                    retained += 1;
                }
                match (&options.objective, deferred) {
                    (_, false) => m.add(g, p.label),
                    (CalibrationObjective::RetainedF1, true) => {}
                    (CalibrationObjective::CascadeF1 { oracle_labels }, true) => {
                        let o = oracle_labels.as_ref().map_or(g, |o| o[i]);
                        m.add(g, o);
                    }
                }
            }
            let f1 = if m.total() == 0 { 0.0 } else { m.macro_f1(options.empty_class)? };
            Ok(SweepPoint {
                threshold,
                retained_macro_f1: f1,
                deferral_rate: (n - retained) as f64 / n as f64,
                retained,
            })
        })
        .collect::<Result<Vec<_>, DeferralError>>()?;

    let best = select_best(&sweep);
    Ok(CalibrationReport {
        metric,
        chosen_threshold: best.threshold,
        retained_macro_f1: best.retained_macro_f1,
        deferral_rate: best.deferral_rate,
        sweep,
    })
}

fn select_best(sweep: &[SweepPoint]) -> &SweepPoint {
    let mut best = &sweep[0];
    for point in &sweep[1..] {
        let df = point.retained_macro_f1 - best.retained_macro_f1;
        let better = if df.abs() <= F1_TIE_TOLERANCE {
            point.deferral_rate < best.deferral_rate
                || (point.deferral_rate == best.deferral_rate && point.threshold < best.threshold)
        } else {
            df > 0.0
        };
        if better {
            best = point;
        }
    }
    best
}

/// Calibrate a full policy for `mode`: thresholds from the sweep, VET
/// classes from per-class validation F1. `mc_means` are needed only for
/// MC-dropout mode.
pub fn calibrate_policy(
    mode: DeferralMode,
    val_preds: &[Prediction],
    val_gold: &[StanceLabel],
    mc_means: Option<&[Prediction]>,
    vet_cutoff: f64,
    options: &CalibrationOptions,
) -> Result<(DeferralPolicy, Option<CalibrationReport>), DeferralError> {
    let mut policy = DeferralPolicy::new(mode);
    policy.vet_f1_cutoff = vet_cutoff;
    policy.entropy_normalized = options.entropy_normalized;
    let report = match mode {
        DeferralMode::Msp | DeferralMode::MspPlusVet => {
            let r = calibrate_threshold(val_preds, val_gold, CalibrationMetric::Msp, options)?;
            policy.msp_threshold = r.chosen_threshold;
            Some(r)
        }
        DeferralMode::SoftmaxEntropy => {
            let r = calibrate_threshold(val_preds, val_gold, CalibrationMetric::SoftmaxEntropy, options)?;
            policy.entropy_threshold = r.chosen_threshold;
            Some(r)
        }
        DeferralMode::McDropout => {
            let means = mc_means.ok_or(DeferralError::EmptySamples)?;
            let r = calibrate_threshold(means, val_gold, CalibrationMetric::McEntropy, options)?;
            policy.entropy_threshold = r.chosen_threshold;
            Some(r)
        }
        DeferralMode::Vet => None,
    };
    if matches!(mode, DeferralMode::Vet | DeferralMode::MspPlusVet) {
        if val_preds.is_empty() {
            return Err(DeferralError::EmptyValidation);
        }
        policy.vet_low_classes = compute_vet_classes(val_preds, val_gold, vet_cutoff)?;
    }
    Ok((policy, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MythId;
    use StanceLabel::{Neither as N, Oppose as O, Support as S};

    fn pv(p: [f64; 3]) -> ProbabilityVector {
        ProbabilityVector::new(p).unwrap()
    }

    fn pred(p: [f64; 3]) -> Prediction {
        Prediction::local("v", MythId::new(1).unwrap(), pv(p))
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp_decide(&pv([0.9, 0.05, 0.05]), 0.6), Decision::Retain);
        assert_eq!(msp_decide(&pv([0.4, 0.35, 0.25]), 0.6), Decision::Defer);
        assert_eq!(msp_decide(&pv([0.4, 0.35, 0.25]), 0.0), Decision::Retain);
    }

    #[test]
    fn vet_examples() {
        assert_eq!(vet_decide(S, &[S].into()), Decision::Defer);
        assert_eq!(vet_decide(N, &[S, O].into()), Decision::Retain);
        for c in StanceLabel::ALL {
            assert_eq!(vet_decide(c, &BTreeSet::new()), Decision::Retain);
        }
    }

    #[test]
    fn combined_is_disjunction_over_grid() {
        let probs: Vec<ProbabilityVector> = (0..=10)
            .flat_map(|a| (0..=(10 - a)).map(move |b| pv([a as f64 / 10.0, b as f64 / 10.0, (10 - a - b) as f64 / 10.0])))
            .collect();
        let sets: Vec<BTreeSet<StanceLabel>> =
            (0..8u8).map(|mask| StanceLabel::ALL.into_iter().filter(|c| mask & (1 << c.index()) != 0).collect()).collect();
        for p in &probs {
            for set in &sets {
                for tau in [0.0, 0.35, 0.5, 0.7, 1.0] {
                    let policy = DeferralPolicy::msp_plus_vet(tau, set.iter().copied());
                    let expect = msp_decide(p, tau).is_defer() || vet_decide(p.argmax(), set).is_defer();
                    assert_eq!(combined_decide(p, p.argmax(), &policy).is_defer(), expect);
                    assert_eq!(policy.decide(p, None).unwrap().is_some(), expect);
                }
            }
        }
    }

    #[test]
    fn combined_reasons() {
        let policy = DeferralPolicy::msp_plus_vet(0.6, [S]);
        assert_eq!(policy.decide(&pv([0.9, 0.05, 0.05]), None).unwrap(), None);
        assert_eq!(policy.decide(&pv([0.05, 0.05, 0.9]), None).unwrap(), Some(DeferralReason::Vet));
        assert_eq!(policy.decide(&pv([0.4, 0.35, 0.25]), None).unwrap(), Some(DeferralReason::Msp));
        assert_eq!(policy.decide(&pv([0.25, 0.35, 0.4]), None).unwrap(), Some(DeferralReason::Both));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&pv([1.0, 0.0, 0.0])), 0.0);
        assert!((entropy(&ProbabilityVector::uniform()) - 3f64.ln()).abs() < 1e-12);
        assert!((entropy(&pv([0.5, 0.5, 0.0])) - 2f64.ln()).abs() < 1e-12);
        assert!((MAX_ENTROPY - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mc_dropout_examples() {
        let one_hot = vec![ProbabilityVector::one_hot(S); 20];
        let (mean, h) = mc_dropout_uncertainty(&one_hot).unwrap();
        assert_eq!(mean, ProbabilityVector::one_hot(S));
        assert_eq!(h, 0.0);
        let (mean, h) = mc_dropout_uncertainty(&[pv([1.0, 0.0, 0.0]), pv([0.0, 1.0, 0.0])]).unwrap();
        assert_eq!(mean.as_array(), [0.5, 0.5, 0.0]);
        assert!((h - 2f64.ln()).abs() < 1e-12);
        assert_eq!(mc_dropout_uncertainty(&[]), Err(DeferralError::EmptySamples));
    }

    #[test]
    fn entropy_policies() {
        let mut p = DeferralPolicy::new(DeferralMode::SoftmaxEntropy);
        p.entropy_threshold = 0.5;
        assert_eq!(p.decide(&pv([0.5, 0.5, 0.0]), None).unwrap(), Some(DeferralReason::Entropy));
        assert_eq!(p.decide(&pv([0.9, 0.05, 0.05]), None).unwrap(), None);

        let mut mc = DeferralPolicy::new(DeferralMode::McDropout);
        mc.entropy_threshold = 0.5;
        let probs = pv([1.0, 0.0, 0.0]);
        assert!(mc.decide(&probs, None).is_err());
        let samples = [pv([1.0, 0.0, 0.0]), pv([0.0, 1.0, 0.0])];
        assert_eq!(mc.decide(&probs, Some(&samples)).unwrap(), Some(DeferralReason::Entropy));
    }

    #[test]
    fn vet_all_correct_is_empty() {
        let preds: Vec<_> = [S, O, N].iter().map(|&c| Prediction::local("v", MythId::new(1).unwrap(), ProbabilityVector::one_hot(c))).collect();
        assert!(compute_vet_classes(&preds, &[S, O, N], 0.8).unwrap().is_empty());
    }

    #[test]
    fn vet_always_neither_on_balanced_set() {
        let gold: Vec<_> = [O, N, S].iter().cycle().take(9).copied().collect();
        let preds: Vec<_> = (0..9).map(|_| pred([0.1, 0.8, 0.1])).collect();
        let set = compute_vet_classes(&preds, &gold, 0.8).unwrap();
        assert_eq!(set, [O, N, S].into());
        // Neither F1 = 0.5: under a 0.5 cutoff only the zero-F1 classes remain
        assert_eq!(compute_vet_classes(&preds, &gold, 0.5).unwrap(), [O, S].into());
    }

    #[test]
    fn vet_cutoff_bounds() {
        let preds = vec![pred([0.1, 0.8, 0.1])];
        assert_eq!(compute_vet_classes(&preds, &[N], 1.0 + 1e-9), Err(DeferralError::InvalidCutoff(1.0 + 1e-9)));
        assert_eq!(compute_vet_classes(&preds, &[N], 0.0), Err(DeferralError::InvalidCutoff(0.0)));
        assert!(matches!(compute_vet_classes(&preds, &[N, N], 0.8), Err(DeferralError::LengthMismatch { .. })));
        let f1 = [Some(0.0), Some(1.0), None];
        assert!(vet_classes_from_f1(f1, 0.0).is_empty());
        assert_eq!(vet_classes_from_f1(f1, 1.0 + 1e-9).len(), 3);
        assert_eq!(vet_classes_from_f1(f1, 0.5), [O, S].into());
    }

    #[test]
    fn calibration_all_correct_picks_zero() {
        let gold = [O, N, S, S];
        let preds: Vec<_> = [[0.9, 0.05, 0.05], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7], [0.0, 0.0, 1.0]].map(pred).to_vec();
        let r = calibrate_threshold(&preds, &gold, CalibrationMetric::Msp, &CalibrationOptions::default()).unwrap();
        assert_eq!(r.chosen_threshold, 0.0);
        assert_eq!(r.retained_macro_f1, 1.0);
        assert_eq!(r.deferral_rate, 0.0);
        assert_eq!(r.sweep.len(), 101);
    }

    #[test]
    fn calibration_four_item_case() {
        // two correct at 0.95 (Support, Oppose), two wrong at 0.40
        let preds = vec![
            pred([0.025, 0.025, 0.95]),
            pred([0.95, 0.025, 0.025]),
            pred([0.25, 0.35, 0.40]),
            pred([0.40, 0.35, 0.25]),
        ];
        let gold = [S, O, N, N];
        let opts = CalibrationOptions { empty_class: EmptyClassPolicy::Exclude, ..Default::default() };
        let r = calibrate_threshold(&preds, &gold, CalibrationMetric::Msp, &opts).unwrap();
        assert_eq!(r.chosen_threshold, 0.41);
        assert_eq!(r.retained_macro_f1, 1.0);
        assert_eq!(r.deferral_rate, 0.5);
        // default convention: the absent Neither class scores 0, same choice
        let r = calibrate_threshold(&preds, &gold, CalibrationMetric::Msp, &CalibrationOptions::default()).unwrap();
        assert_eq!(r.chosen_threshold, 0.41);
        assert!((r.retained_macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        // zero retained above 0.95
        assert_eq!(r.sweep[100].retained, 0);
        assert_eq!(r.sweep[100].retained_macro_f1, 0.0);
    }

    #[test]
    fn calibration_errors_and_grid_override() {
        assert_eq!(
            calibrate_threshold(&[], &[], CalibrationMetric::Msp, &CalibrationOptions::default()),
            Err(DeferralError::EmptyValidation)
        );
        let opts = CalibrationOptions { grid_step: 0.1, ..Default::default() };
        let r = calibrate_threshold(&[pred([0.1, 0.8, 0.1])], &[N], CalibrationMetric::Msp, &opts).unwrap();
        assert_eq!(r.sweep.len(), 11);
        assert_eq!(r.sweep[3].threshold, 0.3);
    }

    #[test]
    fn entropy_grid_rescaled() {
        let preds = vec![pred([0.1, 0.8, 0.1]), pred([0.34, 0.33, 0.33])];
        let r = calibrate_threshold(&preds, &[N, S], CalibrationMetric::SoftmaxEntropy, &CalibrationOptions::default())
            .unwrap();
        assert_eq!(r.sweep.last().unwrap().threshold, MAX_ENTROPY);
        assert_eq!(r.sweep.last().unwrap().retained, 2);
        let opts = CalibrationOptions { entropy_normalized: true, ..Default::default() };
        let r = calibrate_threshold(&preds, &[N, S], CalibrationMetric::SoftmaxEntropy, &opts).unwrap();
        assert_eq!(r.sweep.last().unwrap().threshold, 1.0);
    }

    #[test]
    fn cascade_objective_prefers_deferring_errors() {
        let preds = vec![pred([0.9, 0.05, 0.05]), pred([0.5, 0.3, 0.2])];
        let gold = [O, S];
        let opts = CalibrationOptions {
            objective: CalibrationObjective::CascadeF1 { oracle_labels: None },
            ..Default::default()
        };
        let r = calibrate_threshold(&preds, &gold, CalibrationMetric::Msp, &opts).unwrap();
        assert_eq!(r.chosen_threshold, 0.51);
        assert_eq!(r.deferral_rate, 0.5);
    }

    #[test]
    fn calibrate_policy_msp_vet() {
        let preds = vec![pred([0.9, 0.05, 0.05]), pred([0.1, 0.2, 0.7]), pred([0.1, 0.8, 0.1])];
        let gold = [O, N, N];
        let (p, r) = calibrate_policy(DeferralMode::MspPlusVet, &preds, &gold, None, 0.8, &CalibrationOptions::default()).unwrap();
        assert!(r.is_some());
        assert!(p.vet_low_classes.contains(&S));
        assert_eq!(p.msp_threshold, r.unwrap().chosen_threshold);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex() -> impl Strategy<Value = ProbabilityVector> {
            (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
                .prop_filter("nonzero", |(a, b, c)| a + b + c > 1e-6)
                .prop_map(|(a, b, c)| ProbabilityVector::normalized([a, b, c]).unwrap())
        }

        proptest! {
            #[test]
            fn msp_deferral_monotone_in_threshold(
                items in proptest::collection::vec((simplex(), 0usize..3), 1..40)
            ) {
                let preds: Vec<_> = items.iter().map(|(p, _)| Prediction::local("v", MythId::new(1).unwrap(), *p)).collect();
                let gold: Vec<_> = items.iter().map(|(_, g)| StanceLabel::ALL[*g]).collect();
                let r = calibrate_threshold(&preds, &gold, CalibrationMetric::Msp, &CalibrationOptions::default()).unwrap();
                for w in r.sweep.windows(2) {
                    prop_assert!(w[0].deferral_rate <= w[1].deferral_rate);
                }
                prop_assert!(r.sweep.iter().any(|s| s.threshold == r.chosen_threshold));
                prop_assert!(r.sweep.iter().all(|s| s.retained_macro_f1 <= r.retained_macro_f1 + F1_TIE_TOLERANCE));
            }

            #[test]
            fn entropy_bounded_and_maximal_at_uniform(p in simplex()) {
                let h = entropy(&p);
                prop_assert!(h >= 0.0 && h <= entropy(&ProbabilityVector::uniform()) + 1e-12);
                let one_hot = p.as_array().iter().filter(|&&x| x == 1.0).count() == 1;
                prop_assert_eq!(h == 0.0, one_hot);
            }
        }
    }
}
