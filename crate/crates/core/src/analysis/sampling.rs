use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, StanceLabel};
use crate::seeding::SeedMixer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub class: StanceLabel,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedSample {
    /// Oppose picks first, then Neither, then Support.
    pub ids: Vec<String>,
    pub shortfalls: Vec<Shortfall>,
}

/// Up to `per_class` ids per preliminary label, drawn uniformly without
/// replacement. Only records present in `dataset` are eligible.
pub fn stratified_sample(
    dataset: &Dataset,
    prelim: &BTreeMap<String, StanceLabel>,
    per_class: usize,
    seed: u64,
) -> StratifiedSample {
    let mut members: [Vec<&str>; 3] = Default::default();
    for r in &dataset.records {
        if let Some(l) = prelim.get(&r.video_id) {
            members[l.index()].push(&r.video_id);
        }
    }
    let mut ids = Vec::new();
    let mut shortfalls = Vec::new();
    for class in StanceLabel::ALL {
        let pool = &members[class.index()];
        if pool.len() < per_class {
            shortfalls.push(Shortfall { class, requested: per_class, available: pool.len() });
        }
        let mut rng = SeedMixer::new(seed).str(class.name()).rng();
        ids.extend(pool.choose_multiple(&mut rng, per_class).map(|s| s.to_string()));
    }
    StratifiedSample { ids, shortfalls }
}
