//! Seeded synthetic campaigns for `simulate`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde_json::{json, Value};
use triage_core::domain::{Dataset, MythId, RawLabel, StanceLabel, VideoRecord};
use triage_core::scorers::{ReplayOracle, TokenUsage};
use triage_core::seeding::SeedMixer;

/// Token usage recorded on synthetic oracle answers (the cost model's averages).
const USAGE: TokenUsage = TokenUsage { input_tokens: 6067, output_tokens: 144 };

const TOPICS: [&str; 4] = ["vaccines", "abortion", "weight loss", "anti-vax"];
const FILTERS: [&str; 3] = ["relevance", "view count", "upload date"];

/// `n` records with seeded gold for every myth. Each video first draws an
/// overall lean from `weights` (oppose, neither, support); a leaning video
/// takes that stance on each myth with probability one half and Neither
/// otherwise, so gold never mixes Support and Oppose.
pub fn dataset(prefix: &str, n: usize, myths: &[MythId], weights: [f64; 3], seed: u64) -> Dataset {
    let total: f64 = weights.iter().sum();
    let records = (0..n)
        .map(|i| {
            let id = format!("{prefix}{i:05}");
            let mut rng = SeedMixer::new(seed).str(&id).rng();
            let u = rng.gen::<f64>() * total;
            let lean = if u < weights[0] {
                StanceLabel::Oppose
            } else if u < weights[0] + weights[1] {
                StanceLabel::Neither
            } else {
                StanceLabel::Support
            };
            let mut labels: Vec<StanceLabel> =
                myths.iter().map(|_| if rng.gen_bool(0.5) { lean } else { StanceLabel::Neither }).collect();
            // A leaning video states its stance at least once.
            if !labels.contains(&lean) {
                if let Some(first) = labels.first_mut() {
                    *first = lean;
                }
            }
            let gold = myths.iter().zip(labels).map(|(&m, l)| (m, RawLabel::from(l))).collect();
            let mut r = VideoRecord::new(id.clone(), format!("synthetic video {id}"), "generated description");
            r.gold = Some(gold);
            r.topic = Some(TOPICS[i % TOPICS.len()].to_string());
            r.filter = Some(FILTERS[i % FILTERS.len()].to_string());
            r
        })
        .collect();
    Dataset::new(prefix, records).expect("generated ids are unique")
}

/// Gold with probability `accuracy`, otherwise one of the other two labels.
pub fn oracle_answers(
    gold: &BTreeMap<(String, MythId), StanceLabel>,
    accuracy: f64,
    seed: u64,
) -> BTreeMap<(String, MythId), StanceLabel> {
    gold.iter()
        .map(|((id, m), &g)| {
            let mut rng = SeedMixer::new(seed).str("oracle").str(id).u64(m.index().into()).rng();
            let label = if rng.gen::<f64>() < accuracy {
                g
            } else {
                let others: Vec<_> = StanceLabel::ALL.into_iter().filter(|&c| c != g).collect();
                others[rng.gen_range(0..2)]
            };
            ((id.clone(), *m), label)
        })
        .collect()
}

pub fn replay_oracle(answers: &BTreeMap<(String, MythId), StanceLabel>) -> ReplayOracle {
    let mut oracle = ReplayOracle::new();
    for ((id, m), &label) in answers {
        oracle.insert_verdict(id.clone(), m.index(), label, USAGE);
    }
    oracle
}

/// Fixture lines loadable by `ReplayOracle::load` and `serve-replay`.
pub fn write_oracle_fixtures(path: &Path, oracle: &ReplayOracle) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ((id, idx), resp) in oracle.responses() {
        let mut line = json!({"video_id": id, "myth_index": idx});
        if let (Value::Object(dst), Value::Object(src)) = (&mut line, resp) {
            dst.extend(src.clone());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}
