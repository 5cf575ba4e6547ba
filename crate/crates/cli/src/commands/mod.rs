pub mod analyze;
pub mod calibrate;
pub mod cost;
pub mod eval;
pub mod run;
pub mod serve;
pub mod simulate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use triage_core::domain::{load_dataset, Dataset, MythId, StanceLabel};
use triage_core::scorers::{
    HttpOracle, Oracle, RemoteScorer, ReplayOracle, ReplayScorer, Scorer, SimulatedScorer, StubScorer,
    ProbabilityVector,
};

use crate::config::{CampaignConfig, ScorerConfig};
use crate::error::{scorer_failure, Failure};

/// Flags shared by every subcommand. Each one overrides its config value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct GlobalArgs {
    /// Campaign config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Records to label (JSONL). For `calibrate`, the validation split.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Policies file written by `calibrate`.
    #[arg(long, global = true)]
    pub policies: Option<PathBuf>,
    /// Labels file written by `run`.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Records with gold labels (JSONL).
    #[arg(long, global = true)]
    pub gold: Option<PathBuf>,
    /// Recommendation edges (JSONL).
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Local scoring threads; 0 uses all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Maximum concurrent oracle requests.
    #[arg(long, global = true)]
    pub oracle_inflight: Option<usize>,
    /// Oracle replay fixtures (JSONL); replaces the HTTP endpoint.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    #[arg(long, env = "ORACLE_TOKEN", hide_env_values = true, global = true)]
    pub oracle_token: Option<String>,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
}

impl GlobalArgs {
    /// Config file (or defaults) with flag overrides applied, validated.
    pub fn load_config(&self) -> Result<CampaignConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => CampaignConfig::load(p)?,
            None => CampaignConfig::default(),
        };
        let d = &mut cfg.data;
        override_path(&mut d.dataset, &self.dataset);
        override_path(&mut d.policies, &self.policies);
        override_path(&mut d.gold, &self.gold);
        override_path(&mut d.graph, &self.graph);
        override_path(&mut cfg.oracle.replay, &self.replay);
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.pipeline.workers = w;
        }
        if let Some(n) = self.oracle_inflight {
            cfg.oracle.max_inflight = n;
        }
        // Relative paths in a config file are resolved against its directory.
        if let Some(base) = self.config.as_deref().and_then(Path::parent) {
            resolve_relative(&mut cfg, base, self);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn override_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(p.clone());
    }
}

fn resolve_relative(cfg: &mut CampaignConfig, base: &Path, flags: &GlobalArgs) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    let d = &mut cfg.data;
    for (slot, flag) in [
        (&mut d.dataset, &flags.dataset),
        (&mut d.policies, &flags.policies),
        (&mut d.gold, &flags.gold),
        (&mut d.graph, &flags.graph),
        (&mut cfg.oracle.replay, &flags.replay),
    ] {
        if flag.is_none() {
            if let Some(p) = slot.as_mut() {
                fix(p);
            }
        }
    }
    for p in [&mut d.validation, &mut d.overrides].into_iter().flatten() {
        fix(p);
    }
    if flags.out.is_none() {
        fix(&mut cfg.out);
    }
    if let ScorerConfig::Replay { path } = &mut cfg.scorer {
        fix(path);
    }
}

pub fn require<'a>(slot: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path, Failure> {
    slot.as_deref().ok_or_else(|| Failure::config(format!("no {what} given (use {flag} or the config file)")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    load_dataset(path).map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("loading {}", path.display()))))
}

/// Gold labels from the records themselves plus an optional separate gold file.
pub fn gold_labels(dataset: &Dataset, extra: Option<&Path>) -> Result<BTreeMap<(String, MythId), StanceLabel>, Failure> {
    let mut gold = dataset.gold_index();
    if let Some(p) = extra {
        gold.extend(read_dataset(p)?.gold_index());
    }
    Ok(gold)
}

/// Input files whose contents the scorer depends on.
pub fn scorer_inputs(cfg: &CampaignConfig) -> Vec<&Path> {
    match &cfg.scorer {
        ScorerConfig::Replay { path } => vec![path.as_path()],
        _ => Vec::new(),
    }
}

pub fn build_scorer(
    cfg: &CampaignConfig,
    gold: BTreeMap<(String, MythId), StanceLabel>,
) -> Result<Box<dyn Scorer>, Failure> {
    Ok(match &cfg.scorer {
        ScorerConfig::Simulated(spec) => Box::new(SimulatedScorer::new(spec.clone(), gold).map_err(scorer_failure)?),
        ScorerConfig::Replay { path } => Box::new(ReplayScorer::load(path).map_err(|e| Failure::Data(e.into()))?),
        ScorerConfig::Remote(rc) => {
            if rc.endpoint.is_empty() {
                return Err(Failure::config("scorer.endpoint is required for the remote scorer"));
            }
            Box::new(RemoteScorer::new(rc.clone()))
        }
        ScorerConfig::Stub { probs } => {
            let p = ProbabilityVector::new(*probs).map_err(|e| Failure::config(format!("scorer.probs: {e}")))?;
            Box::new(StubScorer::constant(p))
        }
    })
}

pub enum OracleClient {
    Replay(ReplayOracle),
    Http(HttpOracle),
}

impl OracleClient {
    pub fn as_oracle(&self) -> &dyn Oracle {
        match self {
            OracleClient::Replay(o) => o,
            OracleClient::Http(o) => o,
        }
    }

    pub fn as_judge(&self) -> &dyn triage_core::scorers::StanceJudge {
        match self {
            OracleClient::Replay(o) => o,
            OracleClient::Http(o) => o,
        }
    }
}

/// Replay fixtures when given, otherwise the HTTP endpoint; `None` if neither.
pub fn build_oracle(cfg: &CampaignConfig, token: Option<String>) -> Result<Option<OracleClient>, Failure> {
    if let Some(p) = &cfg.oracle.replay {
        let o = ReplayOracle::load(p)
            .map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("loading {}", p.display()))))?;
        return Ok(Some(OracleClient::Replay(o)));
    }
    Ok(cfg.oracle.endpoint.as_deref().map(|ep| OracleClient::Http(HttpOracle::new(cfg.oracle.http(ep, token)))))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Other)
}

pub fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}
