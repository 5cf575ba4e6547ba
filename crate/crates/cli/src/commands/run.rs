use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tracing::info;
use triage_core::deferral::DeferralPolicy;
use triage_core::domain::MythId;
use triage_core::pipeline::{run_triage, Counters, TriageConfig};

use super::{build_oracle, build_scorer, gold_labels, print_json, read_dataset, require, scorer_inputs, GlobalArgs};
use crate::error::{pipeline_failure, Failure};

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Stop after this many completed pairs (exercises resume).
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub labels_file: PathBuf,
    pub manifest_file: PathBuf,
    pub deferral_rate: Option<f64>,
    pub counters: Counters,
}

pub fn read_policies(path: &Path) -> Result<BTreeMap<MythId, DeferralPolicy>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading policies {}", path.display()))
        .map_err(Failure::Data)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing policies {}", path.display()))
        .map_err(Failure::Data)
}

pub fn execute(globals: &GlobalArgs, args: &RunArgs) -> Result<(), Failure> {
    let cfg = globals.load_config()?;
    let dataset_path = require(&cfg.data.dataset, "dataset", "--dataset")?;
    let policies_path = require(&cfg.data.policies, "policies file", "--policies")?;
    let dataset = read_dataset(dataset_path)?;
    let policies = read_policies(policies_path)?;
    let myths = cfg.myths();
    for m in &myths {
        if !policies.contains_key(&m.id) {
            return Err(Failure::data(format!("{} has no policy for {}", policies_path.display(), m.id)));
        }
    }

    let mut inputs = vec![dataset_path, policies_path];
    inputs.extend(scorer_inputs(&cfg));
    if let Some(p) = &cfg.data.gold {
        inputs.push(p);
    }
    if let Some(p) = &cfg.oracle.replay {
        inputs.push(p);
    }
    let fp = cfg.fingerprint(&inputs)?;
    let dir = cfg.run_dir("run", &fp)?;

    let scorer = build_scorer(&cfg, gold_labels(&dataset, cfg.data.gold.as_deref())?)?;
    let oracle = build_oracle(&cfg, globals.oracle_token.clone())?
        .ok_or_else(|| Failure::config("no oracle configured (use --replay or oracle.endpoint)"))?;

    let triage = TriageConfig {
        workers: cfg.pipeline.workers,
        checkpoint: Some(dir.join("checkpoint.jsonl")),
        checkpoint_every: cfg.pipeline.checkpoint_every,
        stop_after: args.stop_after,
        on_oracle_failure: cfg.pipeline.on_oracle_failure,
        mc_seed: cfg.seed,
        fingerprint_salt: fp.clone(),
    };
    let result = run_triage(&dataset, &myths, scorer.as_ref(), oracle.as_oracle(), &policies, &triage)
        .map_err(pipeline_failure)?;

    let labels_file = dir.join("labels.jsonl");
    let manifest_file = dir.join("manifest.json");
    result.write_labels(&labels_file).map_err(pipeline_failure)?;
    result.write_manifest(&manifest_file).map_err(pipeline_failure)?;
    let c = &result.counters;
    info!(pairs = c.n_predictions, deferred = c.n_deferred, oracle_calls = c.oracle_calls, "run complete");

    let out = RunOutput {
        run_dir: dir,
        labels_file,
        manifest_file,
        deferral_rate: c.deferral_rate().ok(),
        counters: c.clone(),
    };
    if globals.json {
        print_json(&out);
    } else {
        println!("items        {}", c.n_items);
        println!("pairs        {}", c.n_predictions);
        println!("deferred     {} ({:.2}%)", c.n_deferred, out.deferral_rate.unwrap_or(0.0) * 100.0);
        println!("oracle calls {} ({} new)", c.oracle_calls, c.new_oracle_calls);
        println!("resumed      {}", c.resumed_pairs);
        println!("unresolved   {}", c.n_unresolved);
        println!("labels: {}", out.labels_file.display());
        println!("manifest: {}", out.manifest_file.display());
    }
    if c.n_unresolved > 0 {
        return Err(Failure::Oracle(anyhow::anyhow!(
            "{} deferred pairs kept their local label because the oracle failed; rerun to retry them",
            c.n_unresolved
        )));
    }
    Ok(())
}
