use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tracing::info;
use triage_core::deferral::{calibrate_policy, mc_dropout_uncertainty, CalibrationReport, DeferralMode, DeferralPolicy};
use triage_core::domain::{Dataset, MythId, StanceLabel};
use triage_core::metrics::{ClassificationReport, EmptyClassPolicy};
use triage_core::scorers::{Prediction, Scorer};
use triage_core::seeding::SeedMixer;

use super::{build_scorer, gold_labels, print_json, read_dataset, scorer_inputs, write_json, GlobalArgs};
use crate::config::CampaignConfig;
use crate::error::{scorer_failure, Failure};

#[derive(Debug, Clone, clap::Args)]
pub struct CalibrateArgs {
    /// Threshold grid step (default from config, 0.01).
    #[arg(long)]
    pub grid_step: Option<f64>,
}

/// Per-myth output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MythCalibration {
    pub myth: MythId,
    pub mode: DeferralMode,
    pub n_validation: usize,
    pub policy: DeferralPolicy,
    pub local: ClassificationReport,
    pub report: Option<CalibrationReport>,
}

#[derive(Debug, Serialize)]
pub struct CalibrateOutput {
    pub run_dir: PathBuf,
    pub policies_file: PathBuf,
    pub myths: Vec<MythCalibration>,
}

/// Local predictions (and MC means when needed) for every validation record
/// with gold for `myth`.
pub struct Scored {
    pub preds: Vec<Prediction>,
    pub gold: Vec<StanceLabel>,
    pub mc_means: Option<Vec<Prediction>>,
}

pub fn score_validation(
    scorer: &dyn Scorer,
    dataset: &Dataset,
    gold: &BTreeMap<(String, MythId), StanceLabel>,
    myth: MythId,
    mc: Option<(usize, u64)>,
) -> Result<Scored, Failure> {
    let mut out = Scored { preds: Vec::new(), gold: Vec::new(), mc_means: mc.map(|_| Vec::new()) };
    for r in &dataset.records {
        let Some(&g) = gold.get(&(r.video_id.clone(), myth)) else { continue };
        let probs = scorer.score(r, myth).map_err(scorer_failure)?;
        let pred = Prediction::local(r.video_id.clone(), myth, probs);
        if let (Some((passes, seed)), Some(means)) = (mc, out.mc_means.as_mut()) {
            let sub = SeedMixer::new(seed).str(&r.video_id).u64(myth.index().into()).finish();
            let samples = scorer.score_stochastic(r, myth, passes, sub).map_err(scorer_failure)?;
            let (mean, _) = mc_dropout_uncertainty(&samples).map_err(|e| Failure::Data(e.into()))?;
            means.push(Prediction { probs: mean, ..pred.clone() });
        }
        out.preds.push(pred);
        out.gold.push(g);
    }
    Ok(out)
}

pub fn calibrate_all(cfg: &CampaignConfig, scorer: &dyn Scorer, dataset: &Dataset) -> Result<Vec<MythCalibration>, Failure> {
    let gold = gold_labels(dataset, None)?;
    let options = cfg.calibration.options();
    let mut out = Vec::new();
    for myth in cfg.myths() {
        let mode = cfg.deferral.mode_for(myth.id);
        let mc = (mode == DeferralMode::McDropout).then_some((cfg.deferral.mc_passes, cfg.seed));
        let scored = score_validation(scorer, dataset, &gold, myth.id, mc)?;
        if scored.preds.is_empty() {
            return Err(Failure::data(format!("validation split has no gold labels for {}", myth.id)));
        }
        let (mut policy, report) = calibrate_policy(
            mode,
            &scored.preds,
            &scored.gold,
            scored.mc_means.as_deref(),
            cfg.deferral.vet_cutoff,
            &options,
        )
        .map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("calibrating {}", myth.id))))?;
        policy.mc_passes = cfg.deferral.mc_passes;
        let labels: Vec<_> = scored.preds.iter().map(|p| p.label).collect();
        let local = ClassificationReport::evaluate(&scored.gold, &labels, EmptyClassPolicy::Zero)
            .map_err(|e| Failure::Data(e.into()))?;
        info!(myth = %myth.id, threshold = report.as_ref().map(|r| r.chosen_threshold), "calibrated");
        out.push(MythCalibration { myth: myth.id, mode, n_validation: scored.preds.len(), policy, local, report });
    }
    Ok(out)
}

pub fn policies_of(results: &[MythCalibration]) -> BTreeMap<MythId, DeferralPolicy> {
    results.iter().map(|c| (c.myth, c.policy.clone())).collect()
}

pub fn execute(globals: &GlobalArgs, args: &CalibrateArgs) -> Result<(), Failure> {
    let mut cfg = globals.load_config()?;
    if let Some(step) = args.grid_step {
        cfg.calibration.grid_step = step;
        cfg.validate()?;
    }
    let path = globals
        .dataset
        .clone()
        .or_else(|| cfg.data.validation.clone())
        .or_else(|| cfg.data.dataset.clone())
        .ok_or_else(|| Failure::config("no validation split given (use --dataset or data.validation)"))?;
    let dataset = read_dataset(&path)?;
    if dataset.is_empty() {
        return Err(Failure::data(format!("validation split {} is empty", path.display())));
    }

    let mut inputs = vec![path.as_path()];
    inputs.extend(scorer_inputs(&cfg));
    let fp = cfg.fingerprint(&inputs)?;
    let dir = cfg.run_dir("calibrate", &fp)?;

    let scorer = build_scorer(&cfg, gold_labels(&dataset, None)?)?;
    let results = calibrate_all(&cfg, scorer.as_ref(), &dataset)?;

    let cal_dir = dir.join("calibration");
    std::fs::create_dir_all(&cal_dir)
        .with_context(|| format!("creating {}", cal_dir.display()))
        .map_err(Failure::Other)?;
    for c in &results {
        write_json(&cal_dir.join(format!("{}.json", c.myth)), c)?;
    }
    let policies = policies_of(&results);
    let policies_file = dir.join("policies.json");
    write_json(&policies_file, &policies)?;
    if let Some(extra) = &globals.policies {
        write_json(extra, &policies)?;
    }

    if globals.json {
        print_json(&CalibrateOutput { run_dir: dir, policies_file, myths: results });
        return Ok(());
    }
    println!("{:<4} {:<16} {:>6} {:>10} {:>11} {:>9}  vet", "myth", "mode", "n", "threshold", "retained F1", "deferral");
    for c in &results {
        let (t, f1, rate) = match &c.report {
            Some(r) => (format!("{:.4}", r.chosen_threshold), format!("{:.4}", r.retained_macro_f1), format!("{:.3}", r.deferral_rate)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let vet: Vec<_> = c.policy.vet_low_classes.iter().map(|l| l.name()).collect();
        println!(
            "{:<4} {:<16} {:>6} {:>10} {:>11} {:>9}  {}",
            c.myth.to_string(),
            serde_json::to_value(c.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            c.n_validation,
            t,
            f1,
            rate,
            if vet.is_empty() { "-".to_string() } else { vet.join(",") }
        );
    }
    println!("policies: {}", policies_file.display());
    Ok(())
}
