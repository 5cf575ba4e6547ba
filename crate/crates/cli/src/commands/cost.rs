use std::path::PathBuf;

use serde::Serialize;
use triage_core::costmodel::{cascade_plan, compare_plans, expert_plan, oracle_plan, render_text, CostParams, CostReport, SavingsTable};
use triage_core::pipeline::RunManifest;

use super::{print_json, GlobalArgs};
use crate::error::Failure;

#[derive(Debug, Clone, clap::Args)]
pub struct CostArgs {
    /// Manifest written by `run`; supplies item and deferral counts.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<u64>,
    /// Myths per item.
    #[arg(long)]
    pub myths: Option<u64>,
    /// Deferred (item, myth) pairs.
    #[arg(long)]
    pub deferred: Option<u64>,
    /// Expert hourly wage override.
    #[arg(long)]
    pub wage: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub items: u64,
    pub myths: u64,
    pub deferred: u64,
}

#[derive(Debug, Serialize)]
pub struct CostOutput {
    pub counts: Counts,
    pub reports: Vec<CostReport>,
    pub savings: SavingsTable,
}

/// The three plans for `counts`. With no items there is nothing to train or
/// label, so the cascade's fixed local costs are dropped as well.
pub fn estimate(counts: Counts, params: &CostParams) -> Result<CostOutput, Failure> {
    let mut p = params.clone();
    if counts.items == 0 {
        p.local_train_hours = 0.0;
        p.local_infer_hours = 0.0;
    }
    let reports = vec![
        expert_plan(counts.items, counts.myths, &p),
        oracle_plan(counts.items, counts.myths, &p),
        cascade_plan(counts.deferred, &p),
    ];
    let savings = compare_plans(&reports).map_err(|e| Failure::Other(e.into()))?;
    Ok(CostOutput { counts, reports, savings })
}

fn counts(args: &CostArgs, default_myths: u64) -> Result<Counts, Failure> {
    let manifest = match &args.manifest {
        Some(p) => Some(RunManifest::load(p).map_err(|e| Failure::Data(e.into()))?),
        None => None,
    };
    let from_manifest = manifest.as_ref().map(|m| {
        let c = &m.counters;
        let myths = c.n_predictions.checked_div(c.n_items).map_or(default_myths, |m| m as u64);
        Counts { items: c.n_items as u64, myths, deferred: c.n_deferred as u64 }
    });
    let items = args.items.or(from_manifest.map(|c| c.items));
    let deferred = args.deferred.or(from_manifest.map(|c| c.deferred));
    let myths = args.myths.or(from_manifest.map(|c| c.myths)).unwrap_or(default_myths);
    match (items, deferred) {
        (Some(items), Some(deferred)) => {
            if deferred > items * myths {
                return Err(Failure::config(format!("{deferred} deferred pairs exceed {items} items × {myths} myths")));
            }
            Ok(Counts { items, myths, deferred })
        }
        _ => Err(Failure::config("cost needs --items and --deferred, or --manifest")),
    }
}

pub fn execute(globals: &GlobalArgs, args: &CostArgs) -> Result<(), Failure> {
    let mut cfg = globals.load_config()?;
    if let Some(w) = args.wage {
        cfg.cost.expert_hourly_wage = w;
        cfg.validate()?;
    }
    let counts = counts(args, cfg.myths().len() as u64)?;
    let out = estimate(counts, &cfg.cost)?;
    if globals.json {
        print_json(&out);
    } else {
        println!("items={} myths={} deferred={}", counts.items, counts.myths, counts.deferred);
        print!("{}", render_text(&out.reports, Some(&out.savings)));
    }
    Ok(())
}
