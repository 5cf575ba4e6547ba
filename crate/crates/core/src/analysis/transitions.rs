use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{RecommendationGraph, StanceLabel, MAX_LEVEL};

/// Stance name used for endpoints without a known stance.
pub const UNKNOWN_STANCE: &str = "unknown";

/// Flows at one recommendation level. Rows and columns are ordered
/// (oppose, neither, support).
///
/// Edges with an endpoint of unknown stance are counted separately and left
/// out of the row frequencies, so missing videos are never read as Neither.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub level: u8,
    pub counts: [[u64; 3]; 3],
    /// Row-normalised `counts`; `None` for a source stance with no edges.
    pub rows: [Option<[f64; 3]>; 3],
    /// Known-stance sources whose target stance is unknown, per source stance.
    pub unknown_targets: [u64; 3],
    /// Edges whose source stance is unknown.
    pub unknown_sources: u64,
}

impl LevelTable {
    pub fn row(&self, source: StanceLabel) -> Option<[f64; 3]> {
        self.rows[source.index()]
    }

    /// Share of `source`'s recommendations that are `target`.
    pub fn frequency(&self, source: StanceLabel, target: StanceLabel) -> Option<f64> {
        self.row(source).map(|r| r[target.index()])
    }

    pub fn populated_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn empty_rows(&self) -> Vec<StanceLabel> {
        StanceLabel::ALL.into_iter().filter(|c| self.rows[c.index()].is_none()).collect()
    }
}

/// One aggregated arrow for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub level: u8,
    pub source_stance: String,
    pub target_stance: String,
    pub count: u64,
    /// Share of the source row; `None` for unknown endpoints.
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    /// Levels 1..=5 in order.
    pub levels: Vec<LevelTable>,
    /// Edges with a level outside 1..=5.
    pub skipped_edges: u64,
}

impl TransitionTable {
    pub fn level(&self, level: u8) -> Option<&LevelTable> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn populated_rows(&self) -> usize {
        self.levels.iter().map(LevelTable::populated_rows).sum()
    }

    pub fn edge_list(&self) -> Vec<FlowEdge> {
        let mut out = Vec::new();
        for t in &self.levels {
            for s in StanceLabel::ALL {
                for d in StanceLabel::ALL {
                    let count = t.counts[s.index()][d.index()];
                    if count > 0 {
                        out.push(FlowEdge {
                            level: t.level,
                            source_stance: s.name().to_string(),
                            target_stance: d.name().to_string(),
                            count,
                            frequency: t.frequency(s, d),
                        });
                    }
                }
                if t.unknown_targets[s.index()] > 0 {
                    out.push(FlowEdge {
                        level: t.level,
                        source_stance: s.name().to_string(),
                        target_stance: UNKNOWN_STANCE.to_string(),
                        count: t.unknown_targets[s.index()],
                        frequency: None,
                    });
                }
            }
            if t.unknown_sources > 0 {
                out.push(FlowEdge {
                    level: t.level,
                    source_stance: UNKNOWN_STANCE.to_string(),
                    target_stance: UNKNOWN_STANCE.to_string(),
                    count: t.unknown_sources,
                    frequency: None,
                });
            }
        }
        out
    }

    /// Support share of recommendations per source stance and level, in percent.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "% of recommendations labeled support, by source stance");
        let _ = writeln!(out, "{:<8} {:>10} {:>10} {:>10} {:>10}", "level", "oppose", "neither", "support", "unknown");
        for t in &self.levels {
            let cell = |s: StanceLabel| {
                t.frequency(s, StanceLabel::Support).map_or_else(|| "-".to_string(), |f| format!("{:.2}", f * 100.0))
            };
            let unknown = t.unknown_sources + t.unknown_targets.iter().sum::<u64>();
            let _ = writeln!(
                out,
                "{:<8} {:>10} {:>10} {:>10} {:>10}",
                t.level,
                cell(StanceLabel::Oppose),
                cell(StanceLabel::Neither),
                cell(StanceLabel::Support),
                unknown
            );
        }
        let _ = writeln!(out, "edges touching unknown-stance videos are excluded from the shares");
        out
    }
}

/// Source-stance → target-stance frequencies per recommendation level.
pub fn transition_analysis(graph: &RecommendationGraph, stances: &BTreeMap<String, StanceLabel>) -> TransitionTable {
    let mut levels: Vec<LevelTable> = (1..=MAX_LEVEL).map(|level| LevelTable { level, ..Default::default() }).collect();
    let mut skipped_edges = 0;
    for e in &graph.edges {
        if !(1..=MAX_LEVEL).contains(&e.level) {
            skipped_edges += 1;
            continue;
        }
        let t = &mut levels[(e.level - 1) as usize];
        match (stances.get(&e.source), stances.get(&e.target)) {
            (None, _) => t.unknown_sources += 1,
            (Some(s), None) => t.unknown_targets[s.index()] += 1,
            (Some(s), Some(d)) => t.counts[s.index()][d.index()] += 1,
        }
    }
    for t in &mut levels {
        for s in 0..3 {
            let total: u64 = t.counts[s].iter().sum();
            if total > 0 {
                t.rows[s] = Some(t.counts[s].map(|c| c as f64 / total as f64));
            }
        }
    }
    TransitionTable { levels, skipped_edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RecommendationEdge;
    use StanceLabel::{Neither as N, Oppose as O, Support as S};

    fn edge(s: &str, t: &str, level: u8) -> RecommendationEdge {
        RecommendationEdge { source: s.into(), target: t.into(), level, rank: 1 }
    }

    fn stances(pairs: &[(&str, StanceLabel)]) -> BTreeMap<String, StanceLabel> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn single_edge() {
        let g = RecommendationGraph::from_edges(vec![edge("a", "b", 1)]);
        let t = transition_analysis(&g, &stances(&[("a", S), ("b", S)]));
        assert_eq!(t.level(1).unwrap().row(S), Some([0.0, 0.0, 1.0]));
        assert_eq!(t.populated_rows(), 1);
    }

    #[test]
    fn empty_graph() {
        let t = transition_analysis(&RecommendationGraph::default(), &BTreeMap::new());
        assert_eq!(t.levels.len(), 5);
        assert_eq!(t.populated_rows(), 0);
        assert!(t.edge_list().is_empty());
    }

    #[test]
    fn unknown_endpoints_are_separate() {
        let g = RecommendationGraph::from_edges(vec![
            edge("a", "b", 1),
            edge("a", "x", 1),
            edge("y", "b", 1),
            edge("a", "c", 2),
            edge("a", "c", 9),
        ]);
        let t = transition_analysis(&g, &stances(&[("a", O), ("b", N), ("c", S)]));
        let l1 = t.level(1).unwrap();
        assert_eq!(l1.row(O), Some([0.0, 1.0, 0.0]));
        assert_eq!(l1.unknown_targets[O.index()], 1);
        assert_eq!(l1.unknown_sources, 1);
        assert_eq!(l1.empty_rows(), vec![N, S]);
        assert_eq!(t.skipped_edges, 1);
        let flows = t.edge_list();
        assert_eq!(flows.iter().filter(|f| f.target_stance == UNKNOWN_STANCE).count(), 2);
        assert!(t.to_text().contains("unknown"));
    }
}
