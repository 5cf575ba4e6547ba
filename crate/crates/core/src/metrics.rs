//! Classification and agreement metrics over the three stance classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::StanceLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("per-class F1 undefined for class {0} (no support and no predictions)")]
    UndefinedClass(StanceLabel),
}

/// How a class with no gold and no predicted instances enters averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyClassPolicy {
    /// Contributes F1 = 0.
    #[default]
    Zero,
    /// Left out of the macro average.
    Exclude,
    /// Raise [`MetricError::UndefinedClass`].
    Strict,
}

/// 3×3 counts, rows = gold, columns = predicted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<Self, MetricError> {
        check_lengths(gold, pred)?;
        let mut m = Self::default();
        for (&g, &p) in gold.iter().zip(pred) {
            m.add(g, p);
        }
        Ok(m)
    }

    pub fn add(&mut self, gold: StanceLabel, pred: StanceLabel) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, c: StanceLabel) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn predicted(&self, c: StanceLabel) -> u64 {
        (0..3).map(|g| self.counts[g][c.index()]).sum()
    }

    pub fn true_positives(&self, c: StanceLabel) -> u64 {
        self.counts[c.index()][c.index()]
    }

    /// None when nothing was predicted as `c`.
    pub fn precision(&self, c: StanceLabel) -> Option<f64> {
        let p = self.predicted(c);
        (p > 0).then(|| self.true_positives(c) as f64 / p as f64)
    }

    /// None when `c` has no gold support.
    pub fn recall(&self, c: StanceLabel) -> Option<f64> {
        let s = self.support(c);
        (s > 0).then(|| self.true_positives(c) as f64 / s as f64)
    }

    /// None when `c` is absent from both gold and predictions.
    pub fn f1(&self, c: StanceLabel) -> Option<f64> {
        let tp = self.true_positives(c);
        let denom = self.support(c) + self.predicted(c);
        (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    pub fn per_class_f1(&self, policy: EmptyClassPolicy) -> Result<[Option<f64>; 3], MetricError> {
        let mut out = [None; 3];
        for c in StanceLabel::ALL {
            out[c.index()] = match (self.f1(c), policy) {
                (Some(f), _) => Some(f),
                (None, EmptyClassPolicy::Zero) => Some(0.0),
                (None, EmptyClassPolicy::Exclude) => None,
                (None, EmptyClassPolicy::Strict) => return Err(MetricError::UndefinedClass(c)),
            };
        }
        Ok(out)
    }

    pub fn macro_f1(&self, policy: EmptyClassPolicy) -> Result<f64, MetricError> {
        if self.total() == 0 {
            return Err(MetricError::EmptyInput);
        }
        let scores: Vec<f64> = self.per_class_f1(policy)?.into_iter().flatten().collect();
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn weighted_f1(&self) -> Result<f64, MetricError> {
        let n = self.total();
        if n == 0 {
            return Err(MetricError::EmptyInput);
        }
        let sum: f64 = StanceLabel::ALL
            .into_iter()
            .map(|c| self.support(c) as f64 * self.f1(c).unwrap_or(0.0))
            .sum();
        Ok(sum / n as f64)
    }
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Per-class F1 with the default convention (absent class → 0).
pub fn per_class_f1(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<[f64; 3], MetricError> {
    let m = ConfusionMatrix::from_pairs(gold, pred)?;
    Ok(m.per_class_f1(EmptyClassPolicy::Zero)?.map(|f| f.unwrap_or(0.0)))
}

pub fn macro_f1(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<f64, MetricError> {
    macro_f1_with(gold, pred, EmptyClassPolicy::Zero)
}

pub fn macro_f1_with(gold: &[StanceLabel], pred: &[StanceLabel], policy: EmptyClassPolicy) -> Result<f64, MetricError> {
    ConfusionMatrix::from_pairs(gold, pred)?.macro_f1(policy)
}

pub fn weighted_f1(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<f64, MetricError> {
    ConfusionMatrix::from_pairs(gold, pred)?.weighted_f1()
}

pub fn accuracy(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<f64, MetricError> {
    let m = ConfusionMatrix::from_pairs(gold, pred)?;
    Ok(m.correct() as f64 / m.total() as f64)
}

/// Sparse (item, annotator) → label table. Absent cells mean "not annotated".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTable {
    cells: BTreeMap<(String, String), StanceLabel>,
}

impl AnnotationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item: impl Into<String>, annotator: impl Into<String>, label: StanceLabel) {
        self.cells.insert((item.into(), annotator.into()), label);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&str, &str, StanceLabel)> {
        self.cells.iter().map(|((i, a), &l)| (i.as_str(), a.as_str(), l))
    }

    /// Labels grouped by item.
    pub fn by_item(&self) -> BTreeMap<&str, Vec<StanceLabel>> {
        let mut out: BTreeMap<&str, Vec<StanceLabel>> = BTreeMap::new();
        for ((item, _), &label) in &self.cells {
            out.entry(item.as_str()).or_default().push(label);
        }
        out
    }

    pub fn annotators(&self) -> Vec<&str> {
        let mut a: Vec<&str> = self.cells.keys().map(|(_, a)| a.as_str()).collect();
        a.sort_unstable();
        a.dedup();
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaLevel {
    Nominal,
}

/// Krippendorff's alpha via the coincidence matrix. Items with fewer than two
/// annotations are not pairable and are skipped.
pub fn krippendorff_alpha(table: &AnnotationTable, level: AlphaLevel) -> Result<f64, MetricError> {
    let AlphaLevel::Nominal = level;
    let mut coincidence = [[0.0f64; 3]; 3];
    let mut pairable_units = 0usize;
    for labels in table.by_item().values() {
        let m = labels.len();
        if m < 2 {
            continue;
        }
        pairable_units += 1;
        let mut counts = [0.0f64; 3];
        for l in labels {
            counts[l.index()] += 1.0;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for c in 0..3 {
            for k in 0..3 {
                let pairs = if c == k { counts[c] * (counts[c] - 1.0) } else { counts[c] * counts[k] };
                coincidence[c][k] += pairs * w;
            }
        }
    }
    if pairable_units == 0 {
        return Err(MetricError::DegenerateData("no item has two or more annotations".into()));
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..3 {
        for k in 0..3 {
            if c != k {
                observed += coincidence[c][k];
                expected += marginals[c] * marginals[k];
            }
        }
    }
    if expected == 0.0 {
        return Err(MetricError::DegenerateData("all pairable annotations share one value".into()));
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Cohen's kappa with marginal-product chance agreement.
pub fn cohens_kappa(a: &[StanceLabel], b: &[StanceLabel]) -> Result<f64, MetricError> {
    let m = ConfusionMatrix::from_pairs(a, b)?;
    let n = m.total() as f64;
    let p_o = m.correct() as f64 / n;
    let p_e: f64 = StanceLabel::ALL
        .into_iter()
        .map(|c| (m.support(c) as f64 / n) * (m.predicted(c) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Err(MetricError::DegenerateData("expected agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: StanceLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy, F1 summaries, per-class scores and the confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
}

impl ClassificationReport {
    pub fn from_confusion(confusion: ConfusionMatrix, policy: EmptyClassPolicy) -> Result<Self, MetricError> {
        let macro_f1 = confusion.macro_f1(policy)?;
        let per_class = StanceLabel::ALL
            .into_iter()
            .map(|c| ClassScore {
                label: c,
                precision: confusion.precision(c).unwrap_or(0.0),
                recall: confusion.recall(c).unwrap_or(0.0),
                f1: confusion.f1(c).unwrap_or(0.0),
                support: confusion.support(c),
            })
            .collect();
        Ok(Self {
            n: confusion.total(),
            accuracy: confusion.accuracy().unwrap_or(0.0),
            macro_f1,
            weighted_f1: confusion.weighted_f1()?,
            per_class,
            confusion,
        })
    }

    pub fn evaluate(gold: &[StanceLabel], pred: &[StanceLabel], policy: EmptyClassPolicy) -> Result<Self, MetricError> {
        Self::from_confusion(ConfusionMatrix::from_pairs(gold, pred)?, policy)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}  n={}  accuracy={:.4}  macro_f1={:.4}  weighted_f1={:.4}", self.n, self.accuracy, self.macro_f1, self.weighted_f1);
        let _ = writeln!(s, "  {:<8} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(s, "  {:<8} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.label.name(), c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(s, "  confusion (rows=gold, cols=pred: oppose neither support)");
        for (i, row) in self.confusion.counts.iter().enumerate() {
            let name = StanceLabel::ALL[i].name();
            let _ = writeln!(s, "  {:<8} {:>7} {:>7} {:>7}", name, row[0], row[1], row[2]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use StanceLabel::{Neither as N, Oppose as O, Support as S};

    #[test]
    fn six_item_hand_case() {
        let gold = [S, S, O, O, N, N];
        let pred = [N; 6];
        let f = per_class_f1(&gold, &pred).unwrap();
        assert_eq!(f, [0.0, 0.5, 0.0]);
        assert!((macro_f1(&gold, &pred).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((accuracy(&gold, &pred).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        // Neither support 2, F1 0.5 → 2·0.5/6
        assert!((weighted_f1(&gold, &pred).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_total_miss() {
        let gold = [S, O, N, N];
        assert_eq!(macro_f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(weighted_f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        assert_eq!(macro_f1(&[S], &[O]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_gold() {
        let gold = [N, N, N];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        assert_eq!(weighted_f1(&gold, &gold).unwrap(), 1.0);
        assert!((macro_f1(&gold, &gold).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1_with(&gold, &gold, EmptyClassPolicy::Exclude).unwrap(), 1.0);
        assert_eq!(macro_f1_with(&gold, &gold, EmptyClassPolicy::Strict), Err(MetricError::UndefinedClass(O)));
    }

    #[test]
    fn errors() {
        assert_eq!(macro_f1(&[S], &[S, N]), Err(MetricError::LengthMismatch { left: 1, right: 2 }));
        assert_eq!(macro_f1(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn kappa_hand_case() {
        let k = cohens_kappa(&[S, S, N, N], &[S, N, S, N]).unwrap();
        assert!(k.abs() < 1e-15);
        assert_eq!(cohens_kappa(&[S, N, O], &[S, N, O]).unwrap(), 1.0);
        assert!(matches!(cohens_kappa(&[S, S], &[S, S]), Err(MetricError::DegenerateData(_))));
    }

    #[test]
    fn kappa_near_zero_for_independent_labels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let a: Vec<_> = (0..10_000).map(|_| StanceLabel::ALL[rng.gen_range(0..3)]).collect();
        let b: Vec<_> = (0..10_000).map(|_| StanceLabel::ALL[rng.gen_range(0..3)]).collect();
        assert!(cohens_kappa(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn alpha_perfect_and_degenerate() {
        let mut t = AnnotationTable::new();
        for (item, label) in [("a", S), ("b", O), ("c", N)] {
            t.insert(item, "x", label);
            t.insert(item, "y", label);
        }
        assert_eq!(krippendorff_alpha(&t, AlphaLevel::Nominal).unwrap(), 1.0);

        let mut same = AnnotationTable::new();
        for item in ["a", "b"] {
            same.insert(item, "x", N);
            same.insert(item, "y", N);
        }
        assert!(matches!(krippendorff_alpha(&same, AlphaLevel::Nominal), Err(MetricError::DegenerateData(_))));

        let mut single = AnnotationTable::new();
        single.insert("a", "x", S);
        single.insert("b", "x", O);
        assert!(matches!(krippendorff_alpha(&single, AlphaLevel::Nominal), Err(MetricError::DegenerateData(_))));
    }

    #[test]
    fn alpha_textbook_value() {
        // two coders, four units: (S,S) (S,O) (O,O) (N,N)
        // coincidences: S-S 2, S-O 1, O-S 1, O-O 2, N-N 2; n = 8
        // n_S=3, n_O=3, n_N=2; sum over c!=k of n_c n_k = 2*(9 + 6 + 6) = 42
        // alpha = 1 - (n-1) * 2 / 42 = 2/3
        let mut t = AnnotationTable::new();
        for (item, a, b) in [("1", S, S), ("2", S, O), ("3", O, O), ("4", N, N)] {
            t.insert(item, "x", a);
            t.insert(item, "y", b);
        }
        let alpha = krippendorff_alpha(&t, AlphaLevel::Nominal).unwrap();
        assert!((alpha - 2.0 / 3.0).abs() < 1e-12, "{alpha}");
    }

    #[test]
    fn report_text_lists_classes() {
        let r = ClassificationReport::evaluate(&[S, O, N], &[S, N, N], EmptyClassPolicy::Zero).unwrap();
        let text = r.to_text("M1");
        assert!(text.contains("support") && text.contains("macro_f1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = StanceLabel> {
            (0usize..3).prop_map(|i| StanceLabel::ALL[i])
        }

        proptest! {
            #[test]
            fn metrics_in_range_and_permutation_invariant(
                pairs in proptest::collection::vec((label(), label()), 1..60),
                seed in any::<u64>(),
            ) {
                let (gold, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
                let m = macro_f1(&gold, &pred).unwrap();
                let w = weighted_f1(&gold, &pred).unwrap();
                let a = accuracy(&gold, &pred).unwrap();
                for v in [m, w, a] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                let k = cohens_kappa(&gold, &pred);
                if let Ok(k) = k { prop_assert!(k <= 1.0 + 1e-12); }

                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = pairs.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
                prop_assert_eq!(macro_f1(&g2, &p2).unwrap(), m);
                prop_assert_eq!(accuracy(&g2, &p2).unwrap(), a);
            }

            #[test]
            fn alpha_relabel_invariant(
                cells in proptest::collection::vec((0usize..8, 0usize..4, label()), 4..40),
            ) {
                let mut t = AnnotationTable::new();
                let mut renamed = AnnotationTable::new();
                for (i, a, l) in &cells {
                    t.insert(format!("i{i}"), format!("a{a}"), *l);
                    renamed.insert(format!("item-{}", 7 - i), format!("coder-{}", 3 - a), *l);
                }
                match (krippendorff_alpha(&t, AlphaLevel::Nominal), krippendorff_alpha(&renamed, AlphaLevel::Nominal)) {
                    (Ok(x), Ok(y)) => {
                        prop_assert!((x - y).abs() < 1e-12);
                        prop_assert!(x <= 1.0 + 1e-12);
                    }
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "mismatch {:?}", other),
                }
            }
        }

        #[test]
        fn alpha_close_to_kappa_for_two_coders() {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
            for _ in 0..20 {
                let agree: f64 = rng.gen_range(0.2..0.95);
                let mut t = AnnotationTable::new();
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for i in 0..1000 {
                    let x = StanceLabel::ALL[rng.gen_range(0..3)];
                    let y = if rng.gen_bool(agree) { x } else { StanceLabel::ALL[rng.gen_range(0..3)] };
                    t.insert(i.to_string(), "a", x);
                    t.insert(i.to_string(), "b", y);
                    a.push(x);
                    b.push(y);
                }
                let alpha = krippendorff_alpha(&t, AlphaLevel::Nominal).unwrap();
                let kappa = cohens_kappa(&a, &b).unwrap();
                assert!((alpha - kappa).abs() < 0.02, "alpha {alpha} kappa {kappa}");
            }
        }
    }
}
