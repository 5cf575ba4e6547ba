use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use triage_core::domain::{MythId, StanceLabel};
use triage_core::metrics::{cohens_kappa, krippendorff_alpha, AlphaLevel, AnnotationTable, ClassificationReport, EmptyClassPolicy};
use triage_core::pipeline::{read_labels, LabelRecord};

use super::{print_json, read_dataset, require, write_json, GlobalArgs};
use crate::error::{pipeline_failure, Failure};

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    /// Multi-annotator gold (JSONL of video_id, myth, annotator, label) for
    /// agreement statistics.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MythEval {
    /// Myth id, or "all" for the pooled row.
    pub myth: String,
    /// Labels after deferral.
    pub cascade: ClassificationReport,
    /// Argmax of the local probabilities, before deferral.
    pub local: ClassificationReport,
    pub deferred: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agreement {
    pub items: usize,
    pub annotators: usize,
    pub alpha: Option<f64>,
    /// Only with exactly two annotators, over items both labeled.
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overlap: usize,
    pub per_myth: Vec<MythEval>,
    pub agreement: Option<Agreement>,
}

#[derive(Debug, Deserialize)]
struct AnnotationLine {
    video_id: String,
    #[serde(default)]
    myth: Option<MythId>,
    annotator: String,
    label: StanceLabel,
}

#[derive(Default)]
struct Columns {
    gold: Vec<StanceLabel>,
    cascade: Vec<StanceLabel>,
    local: Vec<StanceLabel>,
    deferred: usize,
}

impl Columns {
    fn push(&mut self, g: StanceLabel, l: &LabelRecord) {
        self.gold.push(g);
        self.cascade.push(l.label);
        self.local.push(l.probs.argmax());
        self.deferred += usize::from(l.deferral_reason.is_some());
    }

    fn report(&self, name: String) -> Result<MythEval, Failure> {
        let eval = |pred: &[StanceLabel]| {
            ClassificationReport::evaluate(&self.gold, pred, EmptyClassPolicy::Zero).map_err(|e| Failure::Data(e.into()))
        };
        Ok(MythEval { myth: name, cascade: eval(&self.cascade)?, local: eval(&self.local)?, deferred: self.deferred })
    }
}

/// Per-myth and pooled reports over pairs present in both inputs.
pub fn evaluate(labels: &[LabelRecord], gold: &BTreeMap<(String, MythId), StanceLabel>) -> Result<EvalReport, Failure> {
    let mut by_myth: BTreeMap<MythId, Columns> = BTreeMap::new();
    let mut all = Columns::default();
    for l in labels {
        if let Some(&g) = gold.get(&(l.video_id.clone(), l.myth)) {
            by_myth.entry(l.myth).or_default().push(g, l);
            all.push(g, l);
        }
    }
    if all.gold.is_empty() {
        return Err(Failure::data("labels and gold share no (video, myth) pairs"));
    }
    let mut per_myth = by_myth.iter().map(|(m, c)| c.report(m.to_string())).collect::<Result<Vec<_>, _>>()?;
    per_myth.push(all.report("all".into())?);
    Ok(EvalReport { overlap: all.gold.len(), per_myth, agreement: None })
}

fn load_annotations(path: &Path) -> Result<AnnotationTable, Failure> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::Data)?;
    let mut table = AnnotationTable::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display())).map_err(Failure::Data)?;
        if line.trim().is_empty() {
            continue;
        }
        let a: AnnotationLine = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))
            .map_err(Failure::Data)?;
        let item = match a.myth {
            Some(m) => format!("{}/{m}", a.video_id),
            None => a.video_id,
        };
        table.insert(item, a.annotator, a.label);
    }
    Ok(table)
}

pub fn agreement(table: &AnnotationTable) -> Agreement {
    let annotators = table.annotators();
    let mut notes = Vec::new();
    let alpha = krippendorff_alpha(table, AlphaLevel::Nominal)
        .map_err(|e| notes.push(format!("alpha: {e}")))
        .ok();
    let kappa = if annotators.len() == 2 {
        let mut cols: BTreeMap<&str, [Option<StanceLabel>; 2]> = BTreeMap::new();
        for (item, who, label) in table.cells() {
            let slot = usize::from(who == annotators[1]);
            cols.entry(item).or_default()[slot] = Some(label);
        }
        let (a, b): (Vec<_>, Vec<_>) = cols.values().filter_map(|[x, y]| Some(((*x)?, (*y)?))).unzip();
        cohens_kappa(&a, &b).map_err(|e| notes.push(format!("kappa: {e}"))).ok()
    } else {
        None
    };
    Agreement { items: table.by_item().len(), annotators: annotators.len(), alpha, kappa, notes }
}

pub fn execute(globals: &GlobalArgs, args: &EvalArgs) -> Result<(), Failure> {
    let cfg = globals.load_config()?;
    let labels_path = require(&globals.labels, "labels file", "--labels")?;
    let gold_path = cfg
        .data
        .gold
        .as_deref()
        .or(cfg.data.dataset.as_deref())
        .ok_or_else(|| Failure::config("no gold given (use --gold)"))?;
    let labels = read_labels(labels_path).map_err(|e| match pipeline_failure(e) {
        Failure::Other(e) => Failure::Data(e),
        f => f,
    })?;
    let gold = read_dataset(gold_path)?.gold_index();
    let mut report = evaluate(&labels, &gold)?;
    let mut inputs = vec![labels_path, gold_path];
    if let Some(p) = &args.annotations {
        report.agreement = Some(agreement(&load_annotations(p)?));
        inputs.push(p);
    }

    let fp = cfg.fingerprint(&inputs)?;
    let dir = cfg.run_dir("eval", &fp)?;
    write_json(&dir.join("eval.json"), &report)?;

    if globals.json {
        print_json(&report);
        return Ok(());
    }
    println!("overlap: {} pairs", report.overlap);
    for m in &report.per_myth {
        println!();
        print!("{}", m.cascade.to_text(&format!("{} cascade", m.myth)));
        println!(
            "{} local     n={}  accuracy={:.4}  macro_f1={:.4}  weighted_f1={:.4}  deferred={}",
            m.myth, m.local.n, m.local.accuracy, m.local.macro_f1, m.local.weighted_f1, m.deferred
        );
    }
    if let Some(a) = &report.agreement {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        println!();
        println!("agreement: {} items, {} annotators, alpha={}, kappa={}", a.items, a.annotators, fmt(a.alpha), fmt(a.kappa));
        for n in &a.notes {
            println!("  note: {n}");
        }
    }
    println!("report: {}", dir.join("eval.json").display());
    Ok(())
}
