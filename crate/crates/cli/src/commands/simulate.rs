use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use triage_core::pipeline::{run_triage, TriageConfig};

use super::calibrate::{calibrate_all, policies_of};
use super::eval::evaluate;
use super::{build_scorer, print_json, write_json, GlobalArgs};
use crate::config::ScorerConfig;
use crate::error::{pipeline_failure, Failure};
use crate::synth;

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    /// Test records per campaign.
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
    /// Validation records per campaign.
    #[arg(long, default_value_t = 500)]
    pub validation_items: usize,
    /// Probability that the oracle returns the gold label.
    #[arg(long, default_value_t = 1.0)]
    pub oracle_accuracy: f64,
    /// Campaigns to run, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// Gold class shares (oppose, neither, support).
    #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [0.3, 0.5, 0.2])]
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedRun {
    pub seed: u64,
    pub local_accuracy: f64,
    pub local_macro_f1: f64,
    pub cascade_accuracy: f64,
    pub cascade_macro_f1: f64,
    pub deferral_rate: f64,
    /// Cascade macro F1 ≥ local macro F1 whenever the oracle beats the local scorer.
    pub pattern_holds: bool,
}

#[derive(Debug, Serialize)]
pub struct SimulateOutput {
    pub run_dir: PathBuf,
    pub oracle_accuracy: f64,
    pub runs: Vec<SimulatedRun>,
}

pub fn execute(globals: &GlobalArgs, args: &SimulateArgs) -> Result<(), Failure> {
    let base = globals.load_config()?;
    if !matches!(base.scorer, ScorerConfig::Simulated(_)) {
        return Err(Failure::config("simulate needs scorer.kind = \"simulated\""));
    }
    if !(0.0..=1.0).contains(&args.oracle_accuracy) {
        return Err(Failure::config(format!("--oracle-accuracy {} outside [0, 1]", args.oracle_accuracy)));
    }
    let weights: [f64; 3] = args.weights.clone().try_into().map_err(|_| Failure::config("--weights needs three values"))?;
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Failure::config("--weights must be non-negative and not all zero"));
    }
    if args.items == 0 || args.validation_items == 0 {
        return Err(Failure::config("--items and --validation-items must be positive"));
    }

    let salt = format!("{}|{}|{}|{}|{:?}", args.items, args.validation_items, args.oracle_accuracy, args.runs, weights);
    let dir = base.run_dir("simulate", &base.fingerprint_salted(&[], &salt)?)?;
    let myth_ids: Vec<_> = base.myths().iter().map(|m| m.id).collect();

    let mut runs = Vec::new();
    for k in 0..args.runs {
        let mut cfg = base.clone();
        cfg.seed = base.seed + k;
        if let ScorerConfig::Simulated(spec) = &mut cfg.scorer {
            spec.seed = spec.seed.wrapping_add(k);
        }
        let val = synth::dataset("val-", args.validation_items, &myth_ids, weights, cfg.seed);
        let test = synth::dataset("test-", args.items, &myth_ids, weights, cfg.seed ^ 0x5eed);
        let mut gold = val.gold_index();
        let test_gold = test.gold_index();
        gold.extend(test_gold.clone());
        let scorer = build_scorer(&cfg, gold)?;
        let oracle = synth::replay_oracle(&synth::oracle_answers(&test_gold, args.oracle_accuracy, cfg.seed));

        let calibration = calibrate_all(&cfg, scorer.as_ref(), &val)?;
        let policies = policies_of(&calibration);
        let triage = TriageConfig { workers: cfg.pipeline.workers, mc_seed: cfg.seed, ..Default::default() };
        let result = run_triage(&test, &cfg.myths(), scorer.as_ref(), &oracle, &policies, &triage)
            .map_err(pipeline_failure)?;
        let labels: Vec<_> = result.labels().collect();
        let report = evaluate(&labels, &test_gold)?;
        let all = report.per_myth.last().expect("pooled row");

        let seed_dir = dir.join(format!("seed-{}", cfg.seed));
        std::fs::create_dir_all(&seed_dir)
            .with_context(|| format!("creating {}", seed_dir.display()))
            .map_err(Failure::Other)?;
        let io = |e: std::io::Error| Failure::Other(anyhow::Error::new(e).context(format!("writing {}", seed_dir.display())));
        val.write_jsonl(seed_dir.join("validation.jsonl")).map_err(|e| Failure::Other(e.into()))?;
        test.write_jsonl(seed_dir.join("test.jsonl")).map_err(|e| Failure::Other(e.into()))?;
        synth::write_oracle_fixtures(&seed_dir.join("oracle.jsonl"), &oracle).map_err(io)?;
        write_json(&seed_dir.join("policies.json"), &policies)?;
        result.write_labels(seed_dir.join("labels.jsonl")).map_err(pipeline_failure)?;
        write_json(&seed_dir.join("eval.json"), &report)?;

        let oracle_better = args.oracle_accuracy > all.local.accuracy;
        runs.push(SimulatedRun {
            seed: cfg.seed,
            local_accuracy: all.local.accuracy,
            local_macro_f1: all.local.macro_f1,
            cascade_accuracy: all.cascade.accuracy,
            cascade_macro_f1: all.cascade.macro_f1,
            deferral_rate: result.counters.deferral_rate().unwrap_or(0.0),
            pattern_holds: !oracle_better || all.cascade.macro_f1 >= all.local.macro_f1,
        });
    }

    let out = SimulateOutput { run_dir: dir.clone(), oracle_accuracy: args.oracle_accuracy, runs };
    write_json(&dir.join("simulate.json"), &out.runs)?;
    if globals.json {
        print_json(&out);
    } else {
        println!("{:>6} {:>9} {:>9} {:>11} {:>11} {:>9}  pattern", "seed", "local acc", "local F1", "cascade acc", "cascade F1", "deferral");
        for r in &out.runs {
            println!(
                "{:>6} {:>9.4} {:>9.4} {:>11.4} {:>11.4} {:>9.3}  {}",
                r.seed,
                r.local_accuracy,
                r.local_macro_f1,
                r.cascade_accuracy,
                r.cascade_macro_f1,
                r.deferral_rate,
                if r.pattern_holds { "holds" } else { "VIOLATED" }
            );
        }
        println!("outputs: {}", dir.display());
    }
    let violated: Vec<_> = out.runs.iter().filter(|r| !r.pattern_holds).map(|r| r.seed).collect();
    if !violated.is_empty() {
        return Err(Failure::Other(anyhow::anyhow!(
            "cascade macro F1 fell below local macro F1 despite a stronger oracle for seeds {violated:?}"
        )));
    }
    Ok(())
}
