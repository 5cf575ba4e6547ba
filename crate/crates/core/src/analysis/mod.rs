//! Prevalence analysis over final labels: overall stance per video, bias
//! scores, distribution tables, stratified samples and recommendation flows.

mod sampling;
mod transitions;

pub use sampling::{stratified_sample, Shortfall, StratifiedSample};
pub use transitions::{transition_analysis, FlowEdge, LevelTable, TransitionTable, UNKNOWN_STANCE};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, MythId, StanceLabel, VideoRecord};
use crate::scorers::{OracleError, StanceJudge};

/// Group key for records without topic/filter metadata.
pub const NO_GROUP: &str = "(none)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no myth labels for {0}")]
    EmptyLabels(String),
    #[error("distribution has no mass")]
    EmptyDistribution,
    #[error("conflicting myth labels for {video_id} and no override or judge: {labels}")]
    UnresolvedConflict { video_id: String, labels: String },
    #[error("unknown group key {0:?} (expected myth, topic, filter or overall)")]
    UnknownGroupKey(String),
    #[error("judge failed for {video_id}: {source}")]
    Judge { video_id: String, source: OracleError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallStance {
    Support,
    Oppose,
    Neither,
    Conflict,
}

impl OverallStance {
    pub fn resolved(self) -> Option<StanceLabel> {
        match self {
            OverallStance::Support => Some(StanceLabel::Support),
            OverallStance::Oppose => Some(StanceLabel::Oppose),
            OverallStance::Neither => Some(StanceLabel::Neither),
            OverallStance::Conflict => None,
        }
    }
}

/// Support if any myth is supported and none opposed, Oppose symmetrically,
/// Neither if all are Neither, Conflict if both Support and Oppose occur.
pub fn consolidate_stance(labels: &BTreeMap<MythId, StanceLabel>) -> Result<OverallStance, AnalysisError> {
    if labels.is_empty() {
        return Err(AnalysisError::EmptyLabels(String::new()));
    }
    let has = |c| labels.values().any(|&l| l == c);
    Ok(match (has(StanceLabel::Support), has(StanceLabel::Oppose)) {
        (true, true) => OverallStance::Conflict,
        (true, false) => OverallStance::Support,
        (false, true) => OverallStance::Oppose,
        (false, false) => OverallStance::Neither,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceProvenance {
    Heuristic,
    Override,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedStance {
    pub label: StanceLabel,
    pub provenance: StanceProvenance,
}

/// Manual overrides take precedence over the judge.
#[derive(Default)]
pub struct ConflictResolver<'a> {
    pub overrides: BTreeMap<String, StanceLabel>,
    pub judge: Option<&'a dyn StanceJudge>,
}

pub fn resolve_conflict(
    record: &VideoRecord,
    labels: &BTreeMap<MythId, StanceLabel>,
    resolver: &ConflictResolver<'_>,
) -> Result<ResolvedStance, AnalysisError> {
    if let Some(&label) = resolver.overrides.get(&record.video_id) {
        return Ok(ResolvedStance { label, provenance: StanceProvenance::Override });
    }
    match resolver.judge {
        Some(judge) => {
            let verdict = judge
                .judge(record, labels)
                .map_err(|source| AnalysisError::Judge { video_id: record.video_id.clone(), source })?;
            Ok(ResolvedStance { label: verdict.label, provenance: StanceProvenance::Judge })
        }
        None => Err(AnalysisError::UnresolvedConflict {
            video_id: record.video_id.clone(),
            labels: labels.iter().map(|(m, l)| format!("{m}={}", l.value())).collect::<Vec<_>>().join(","),
        }),
    }
}

/// Group per-pair labels by video.
pub fn labels_by_video<'a>(
    labels: impl IntoIterator<Item = (&'a str, MythId, StanceLabel)>,
) -> BTreeMap<String, BTreeMap<MythId, StanceLabel>> {
    let mut out: BTreeMap<String, BTreeMap<MythId, StanceLabel>> = BTreeMap::new();
    for (id, m, l) in labels {
        out.entry(id.to_string()).or_default().insert(m, l);
    }
    out
}

/// Overall stance for every video, escalating conflicts to `resolver`.
/// Videos missing from `dataset` can only be resolved by override.
pub fn overall_stances(
    per_video: &BTreeMap<String, BTreeMap<MythId, StanceLabel>>,
    dataset: Option<&Dataset>,
    resolver: &ConflictResolver<'_>,
) -> Result<BTreeMap<String, ResolvedStance>, AnalysisError> {
    let index = dataset.map(Dataset::index).unwrap_or_default();
    let mut out = BTreeMap::new();
    for (id, labels) in per_video {
        let stance = consolidate_stance(labels).map_err(|_| AnalysisError::EmptyLabels(id.clone()))?;
        let resolved = match stance.resolved() {
            Some(label) => ResolvedStance { label, provenance: StanceProvenance::Heuristic },
            None => {
                let placeholder;
                let record = match index.get(id.as_str()) {
                    Some(r) => *r,
                    None => {
                        placeholder = VideoRecord::new(id.clone(), "", "");
                        &placeholder
                    }
                };
                resolve_conflict(record, labels, resolver)?
            }
        };
        out.insert(id.clone(), resolved);
    }
    Ok(out)
}

/// Stance mass; counts or proportions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StanceDistribution {
    pub s: f64,
    pub o: f64,
    pub n: f64,
}

impl StanceDistribution {
    pub fn new(s: f64, o: f64, n: f64) -> Self {
        Self { s, o, n }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = StanceLabel>) -> Self {
        let mut d = Self::default();
        for l in labels {
            d.add(l);
        }
        d
    }

    pub fn add(&mut self, l: StanceLabel) {
        match l {
            StanceLabel::Support => self.s += 1.0,
            StanceLabel::Oppose => self.o += 1.0,
            StanceLabel::Neither => self.n += 1.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.s + self.o + self.n
    }

    /// (oppose, neither, support) shares.
    pub fn proportions(&self) -> Result<[f64; 3], AnalysisError> {
        let t = self.total();
        if !(t > 0.0) {
            return Err(AnalysisError::EmptyDistribution);
        }
        Ok([self.o / t, self.n / t, self.s / t])
    }
}

/// `(s − o) / (s + n + o)`: +1 when everything supports, −1 when everything opposes.
pub fn bias_score(d: &StanceDistribution) -> Result<f64, AnalysisError> {
    let t = d.total();
    if !(t > 0.0) {
        return Err(AnalysisError::EmptyDistribution);
    }
    Ok((d.s - d.o) / t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Myth,
    Topic,
    Filter,
    Overall,
}

impl FromStr for GroupBy {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "myth" => Ok(GroupBy::Myth),
            "topic" => Ok(GroupBy::Topic),
            "filter" => Ok(GroupBy::Filter),
            "overall" => Ok(GroupBy::Overall),
            _ => Err(AnalysisError::UnknownGroupKey(s.to_string())),
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            GroupBy::Myth => "myth",
            GroupBy::Topic => "topic",
            GroupBy::Filter => "filter",
            GroupBy::Overall => "overall",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub group: String,
    pub counts: StanceDistribution,
    /// (oppose, neither, support)
    pub proportions: [f64; 3],
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub group_by: GroupBy,
    pub rows: Vec<DistributionRow>,
    /// Groups with no labels, left out of `rows`.
    pub empty_groups: Vec<String>,
}

impl DistributionTable {
    pub fn row(&self, group: &str) -> Option<&DistributionRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}", self.group_by, "n", "oppose", "neither", "support", "bias");
        for r in &self.rows {
            let [o, n, s] = r.proportions;
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.3}",
                r.group,
                r.counts.total(),
                o,
                n,
                s,
                r.bias
            );
        }
        for g in &self.empty_groups {
            let _ = writeln!(out, "{g:<24} (no labels, excluded)");
        }
        out
    }
}

fn build_table(group_by: GroupBy, groups: BTreeMap<String, StanceDistribution>) -> DistributionTable {
    let mut rows = Vec::new();
    let mut empty_groups = Vec::new();
    for (group, counts) in groups {
        match (counts.proportions(), bias_score(&counts)) {
            (Ok(proportions), Ok(bias)) => rows.push(DistributionRow { group, counts, proportions, bias }),
            _ => empty_groups.push(group),
        }
    }
    DistributionTable { group_by, rows, empty_groups }
}

/// Stance proportions per group. `Myth` groups per-pair labels; the other
/// groupings use each video's overall stance, keyed by the record's `topic`
/// or `filter` metadata (or [`NO_GROUP`]).
pub fn label_distribution(
    pair_labels: &BTreeMap<(String, MythId), StanceLabel>,
    overall: &BTreeMap<String, StanceLabel>,
    dataset: Option<&Dataset>,
    group_by: GroupBy,
) -> DistributionTable {
    let mut groups: BTreeMap<String, StanceDistribution> = BTreeMap::new();
    match group_by {
        GroupBy::Myth => {
            for m in MythId::all() {
                groups.entry(m.to_string()).or_default();
            }
            for ((_, m), &l) in pair_labels {
                groups.entry(m.to_string()).or_default().add(l);
            }
        }
        GroupBy::Overall => {
            let d = groups.entry("overall".to_string()).or_default();
            for &l in overall.values() {
                d.add(l);
            }
        }
        GroupBy::Topic | GroupBy::Filter => {
            let index = dataset.map(Dataset::index).unwrap_or_default();
            for (id, &l) in overall {
                let key = index
                    .get(id.as_str())
                    .and_then(|r| if group_by == GroupBy::Topic { r.topic.clone() } else { r.filter.clone() })
                    .unwrap_or_else(|| NO_GROUP.to_string());
                groups.entry(key).or_default().add(l);
            }
        }
    }
    build_table(group_by, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::{ReplayOracle, TokenUsage};
    use serde_json::json;
    use StanceLabel::{Neither as N, Oppose as O, Support as S};

    fn m(i: u8) -> MythId {
        MythId::new(i).unwrap()
    }

    fn labels(pairs: &[(u8, StanceLabel)]) -> BTreeMap<MythId, StanceLabel> {
        pairs.iter().map(|&(i, l)| (m(i), l)).collect()
    }

    #[test]
    fn consolidation_examples() {
        let mut l = labels(&(2..=8).map(|i| (i, N)).collect::<Vec<_>>());
        l.insert(m(1), S);
        assert_eq!(consolidate_stance(&l).unwrap(), OverallStance::Support);
        let l = labels(&[(1, N), (2, O), (3, N)]);
        assert_eq!(consolidate_stance(&l).unwrap(), OverallStance::Oppose);
        assert_eq!(consolidate_stance(&labels(&[(1, S), (2, O)])).unwrap(), OverallStance::Conflict);
        assert_eq!(consolidate_stance(&labels(&[(1, N)])).unwrap(), OverallStance::Neither);
        assert!(matches!(consolidate_stance(&BTreeMap::new()), Err(AnalysisError::EmptyLabels(_))));
    }

    #[test]
    fn conflict_resolution() {
        let record = VideoRecord::new("v", "t", "d");
        let l = labels(&[(1, S), (2, O)]);
        let err = resolve_conflict(&record, &l, &ConflictResolver::default()).unwrap_err();
        assert!(matches!(err, AnalysisError::UnresolvedConflict { ref video_id, .. } if video_id == "v"));

        let mut judge = ReplayOracle::new();
        judge.insert_verdict("v", 0, O, TokenUsage::default());
        let resolver = ConflictResolver { judge: Some(&judge), ..Default::default() };
        assert_eq!(
            resolve_conflict(&record, &l, &resolver).unwrap(),
            ResolvedStance { label: O, provenance: StanceProvenance::Judge }
        );

        let mut resolver = ConflictResolver { judge: Some(&judge), ..Default::default() };
        resolver.overrides.insert("v".into(), N);
        assert_eq!(resolve_conflict(&record, &l, &resolver).unwrap().provenance, StanceProvenance::Override);

        let mut bad = ReplayOracle::new();
        bad.insert_raw("v", 0, json!({"LABEL": 3}));
        let resolver = ConflictResolver { judge: Some(&bad), ..Default::default() };
        assert!(matches!(
            resolve_conflict(&record, &l, &resolver),
            Err(AnalysisError::Judge { source: OracleError::OracleBadLabel(3), .. })
        ));
    }

    #[test]
    fn overall_stances_escalates_only_conflicts() {
        let mut per_video = BTreeMap::new();
        per_video.insert("a".to_string(), labels(&[(1, S), (2, N)]));
        per_video.insert("b".to_string(), labels(&[(1, S), (2, O)]));
        let mut judge = ReplayOracle::new();
        judge.insert_verdict("b", 0, N, TokenUsage::default());
        let resolver = ConflictResolver { judge: Some(&judge), ..Default::default() };
        let out = overall_stances(&per_video, None, &resolver).unwrap();
        assert_eq!(out["a"].provenance, StanceProvenance::Heuristic);
        assert_eq!(out["b"], ResolvedStance { label: N, provenance: StanceProvenance::Judge });
        assert_eq!(judge.hits(), 1);
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias_score(&StanceDistribution::new(5.0, 5.0, 0.0)).unwrap(), 0.0);
        assert!((bias_score(&StanceDistribution::new(0.36, 0.22, 0.42)).unwrap() - 0.14).abs() < 1e-12);
        assert_eq!(bias_score(&StanceDistribution::new(3.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(bias_score(&StanceDistribution::new(0.0, 3.0, 0.0)).unwrap(), -1.0);
        assert_eq!(bias_score(&StanceDistribution::default()), Err(AnalysisError::EmptyDistribution));
    }

    #[test]
    fn distribution_tables() {
        let mut overall = BTreeMap::new();
        overall.insert("a".to_string(), S);
        let t = label_distribution(&BTreeMap::new(), &overall, None, GroupBy::Overall);
        assert_eq!(t.rows[0].proportions, [0.0, 0.0, 1.0]);

        let t = label_distribution(&BTreeMap::new(), &overall, None, GroupBy::Topic);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].group, NO_GROUP);

        let mut pairs = BTreeMap::new();
        pairs.insert(("a".to_string(), m(1)), S);
        pairs.insert(("b".to_string(), m(1)), O);
        let t = label_distribution(&pairs, &overall, None, GroupBy::Myth);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.row("M1").unwrap().bias, 0.0);
        assert_eq!(t.empty_groups.len(), 7);
        assert!(t.to_text().contains("excluded"));
    }

    #[test]
    fn group_by_parse() {
        assert_eq!("topic".parse::<GroupBy>().unwrap(), GroupBy::Topic);
        assert_eq!("Overall".parse::<GroupBy>().unwrap(), GroupBy::Overall);
        assert_eq!("channel".parse::<GroupBy>(), Err(AnalysisError::UnknownGroupKey("channel".into())));
    }

    #[test]
    fn topic_and_filter_groups() {
        let mut a = VideoRecord::new("a", "", "");
        a.topic = Some("kratom".into());
        a.filter = Some("relevance".into());
        let mut b = VideoRecord::new("b", "", "");
        b.topic = Some("kratom".into());
        let c = VideoRecord::new("c", "", "");
        let ds = Dataset::new("d", vec![a, b, c]).unwrap();
        let overall: BTreeMap<String, StanceLabel> =
            [("a", S), ("b", O), ("c", N)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let t = label_distribution(&BTreeMap::new(), &overall, Some(&ds), GroupBy::Topic);
        assert_eq!(t.row("kratom").unwrap().counts.total(), 2.0);
        assert_eq!(t.row(NO_GROUP).unwrap().counts.n, 1.0);
        let t = label_distribution(&BTreeMap::new(), &overall, Some(&ds), GroupBy::Filter);
        assert_eq!(t.row("relevance").unwrap().bias, 1.0);
        assert_eq!(t.row(NO_GROUP).unwrap().counts.total(), 2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bias_properties(s in 0.0f64..1e6, o in 0.0f64..1e6, n in 0.0f64..1e6, k in 1e-3f64..1e3) {
                prop_assume!(s + o + n > 0.0);
                let d = StanceDistribution::new(s, o, n);
                let b = bias_score(&d).unwrap();
                prop_assert!((-1.0..=1.0).contains(&b));
                let swapped = bias_score(&StanceDistribution::new(o, s, n)).unwrap();
                prop_assert!((b + swapped).abs() < 1e-12);
                let scaled = bias_score(&StanceDistribution::new(s * k, o * k, n * k)).unwrap();
                prop_assert!((b - scaled).abs() < 1e-9);
            }

            #[test]
            fn consolidation_order_invariant(ls in proptest::collection::vec(0usize..3, 1..9), rot in 0usize..8) {
                let a: BTreeMap<MythId, StanceLabel> =
                    ls.iter().enumerate().map(|(i, &l)| (m(i as u8 + 1), StanceLabel::ALL[l])).collect();
                let n = ls.len();
                let b: BTreeMap<MythId, StanceLabel> =
                    ls.iter().enumerate().map(|(i, &l)| (m(((i + rot) % n) as u8 + 1), StanceLabel::ALL[l])).collect();
                prop_assert_eq!(consolidate_stance(&a).unwrap(), consolidate_stance(&b).unwrap());
            }
        }
    }
}
