#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use serde_json::{json, Value};
use triage_core::domain::{Dataset, MythId, RawLabel, RecommendationEdge, RecommendationGraph, StanceLabel, VideoRecord};
use triage_core::scorers::{ReplayOracle, TokenUsage};
use triage_core::seeding::SeedMixer;

pub const O: StanceLabel = StanceLabel::Oppose;
pub const N: StanceLabel = StanceLabel::Neither;
pub const S: StanceLabel = StanceLabel::Support;

/// (edges, edges whose target supports) for the oppose, neither and support
/// source rows of each level 1..=5.
pub type LevelSpec = [(usize, usize); 3];

/// Support-share targets per level: oppose, neither, support source rows.
pub const TABLE14_SPEC: [LevelSpec; 5] = [
    [(92, 5), (191, 3), (63, 8)],
    [(63, 4), (248, 3), (56, 11)],
    [(94, 5), (192, 1), (35, 6)],
    [(110, 4), (345, 1), (25, 5)],
    [(123, 4), (588, 1), (9, 2)],
];

/// Build a crawl-shaped graph whose per-level support shares follow `spec`.
///
/// Each source recommends up to four fresh targets. Level-1 sources are seeds;
/// later sources are drawn from the previous level's targets of the same stance.
pub fn graph_with_support_shares(spec: &[LevelSpec]) -> (RecommendationGraph, BTreeMap<String, StanceLabel>) {
    let mut stances = BTreeMap::new();
    let mut edges = Vec::new();
    let mut prev_targets: [Vec<String>; 3] = Default::default();
    for (li, rows) in spec.iter().enumerate() {
        let level = li as u8 + 1;
        let mut targets: [Vec<String>; 3] = Default::default();
        let mut alternate = 0usize;
        for source_stance in StanceLabel::ALL {
            let (n_edges, n_support) = rows[source_stance.index()];
            let n_sources = n_edges.div_ceil(4);
            let sources: Vec<String> = if level == 1 {
                (0..n_sources)
                    .map(|i| {
                        let id = format!("seed-{}-{i}", source_stance.name());
                        stances.insert(id.clone(), source_stance);
                        id
                    })
                    .collect()
            } else {
                let pool = &prev_targets[source_stance.index()];
                assert!(
                    pool.len() >= n_sources,
                    "level {level}: need {n_sources} {} sources, have {}",
                    source_stance.name(),
                    pool.len()
                );
                pool[..n_sources].to_vec()
            };
            for e in 0..n_edges {
                let target_stance = if e < n_support {
                    S
                } else {
                    alternate += 1;
                    if alternate.is_multiple_of(2) { O } else { N }
                };
                let target = format!("L{level}-{}-{e}", source_stance.name());
                stances.insert(target.clone(), target_stance);
                targets[target_stance.index()].push(target.clone());
                edges.push(RecommendationEdge {
                    source: sources[e / 4].clone(),
                    target,
                    level,
                    rank: (e % 4) as u8 + 1,
                });
            }
        }
        prev_targets = targets;
    }
    (RecommendationGraph::from_edges(edges), stances)
}

/// Overall stances with the given (oppose, neither, support) counts.
pub fn overall_with_counts(counts: [usize; 3]) -> BTreeMap<String, StanceLabel> {
    let mut out = BTreeMap::new();
    for c in StanceLabel::ALL {
        for i in 0..counts[c.index()] {
            out.insert(format!("{}-{i:05}", c.name()), c);
        }
    }
    out
}

/// Search-set overall stance counts: 861 oppose, 1468 neither, 571 support.
pub const TABLE5_OVERALL: [usize; 3] = [861, 1468, 571];

/// Records with seeded gold labels for `myths`. Class shares follow `weights`
/// (oppose, neither, support).
pub fn synthetic_dataset(prefix: &str, n: usize, myths: &[MythId], weights: [f64; 3], seed: u64) -> Dataset {
    let total: f64 = weights.iter().sum();
    let records = (0..n)
        .map(|i| {
            let id = format!("{prefix}{i:05}");
            let mut rng = SeedMixer::new(seed).str(&id).rng();
            let gold = myths
                .iter()
                .map(|&m| {
                    let u: f64 = rng.gen::<f64>() * total;
                    let label = if u < weights[0] {
                        O
                    } else if u < weights[0] + weights[1] {
                        N
                    } else {
                        S
                    };
                    (m, RawLabel::from(label))
                })
                .collect();
            let mut r = VideoRecord::new(id.clone(), format!("title of {id}"), "description");
            r.transcript = "some transcript words".into();
            r.gold = Some(gold);
            r
        })
        .collect();
    Dataset::new(prefix, records).expect("unique ids")
}

/// Oracle that returns gold with probability `accuracy`, otherwise one of the
/// other two labels uniformly.
pub fn noisy_oracle(dataset: &Dataset, accuracy: f64, seed: u64) -> ReplayOracle {
    let mut oracle = ReplayOracle::new();
    for ((id, m), gold) in dataset.gold_index() {
        let mut rng = SeedMixer::new(seed).str(&id).u64(m.index().into()).rng();
        let label = if rng.gen::<f64>() < accuracy {
            gold
        } else {
            let others: Vec<_> = StanceLabel::ALL.into_iter().filter(|&c| c != gold).collect();
            others[rng.gen_range(0..2)]
        };
        oracle.insert_verdict(id, m.index(), label, TokenUsage { input_tokens: 6067, output_tokens: 144 });
    }
    oracle
}

pub fn perfect_oracle(dataset: &Dataset) -> ReplayOracle {
    noisy_oracle(dataset, 1.0, 0)
}

/// Oracle responses keyed for [`triage_core::scorers::replay_server::ReplayServer::oracle`].
pub fn server_fixtures(oracle: &ReplayOracle) -> BTreeMap<(String, u8), Value> {
    oracle.responses().clone()
}

pub fn verdict(label: StanceLabel) -> Value {
    json!({"LABEL": label.value(), "EXCERPTS": [], "JUSTIFICATION": "", "usage": {"input_tokens": 6067, "output_tokens": 144}})
}
