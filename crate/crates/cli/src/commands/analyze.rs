use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tracing::warn;
use triage_core::analysis::{
    consolidate_stance, label_distribution, labels_by_video, resolve_conflict, transition_analysis, AnalysisError,
    ConflictResolver, DistributionTable, GroupBy, ResolvedStance, StanceProvenance, TransitionTable,
};
use triage_core::domain::{load_graph, Dataset, MythId, StanceLabel, VideoRecord};
use triage_core::pipeline::{read_labels, LabelRecord};

use super::{build_oracle, print_json, read_dataset, require, write_json, GlobalArgs};
use crate::error::{analysis_failure, Failure};

#[derive(Debug, Clone, clap::Args)]
pub struct AnalyzeArgs {
    /// JSON object mapping video_id to an overall stance (-1, 0, 1); wins over the judge.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub videos: usize,
    /// Per-pair labels grouped by myth.
    pub by_myth: DistributionTable,
    /// Overall stance per video.
    pub overall: DistributionTable,
    pub by_topic: DistributionTable,
    pub by_filter: DistributionTable,
    pub provenance: BTreeMap<String, usize>,
    /// Videos with conflicting labels that no override or judge resolved;
    /// they are left out of the overall, topic and filter tables.
    pub unresolved: Vec<String>,
    pub transitions: Option<TransitionTable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

impl AnalysisOutput {
    pub fn to_text(&self) -> String {
        let mut s = format!("videos: {}\n\n", self.videos);
        for t in [&self.by_myth, &self.overall, &self.by_topic, &self.by_filter] {
            s.push_str(&t.to_text());
            s.push('\n');
        }
        let prov: Vec<_> = self.provenance.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!("overall stance provenance: {}\n", prov.join(" ")));
        if !self.unresolved.is_empty() {
            s.push_str(&format!("unresolved conflicts: {}\n", self.unresolved.len()));
        }
        if let Some(t) = &self.transitions {
            s.push('\n');
            s.push_str(&t.to_text());
        }
        for n in &self.notices {
            s.push_str(&format!("notice: {n}\n"));
        }
        s
    }
}

/// Overall stances, collecting unresolved conflicts instead of failing on them.
fn resolve_all(
    per_video: &BTreeMap<String, BTreeMap<MythId, StanceLabel>>,
    dataset: Option<&Dataset>,
    resolver: &ConflictResolver<'_>,
) -> Result<(BTreeMap<String, ResolvedStance>, Vec<String>), Failure> {
    let index = dataset.map(Dataset::index).unwrap_or_default();
    let mut out = BTreeMap::new();
    let mut unresolved = Vec::new();
    for (id, labels) in per_video {
        let stance = consolidate_stance(labels).map_err(|_| analysis_failure(AnalysisError::EmptyLabels(id.clone())))?;
        if let Some(label) = stance.resolved() {
            out.insert(id.clone(), ResolvedStance { label, provenance: StanceProvenance::Heuristic });
            continue;
        }
        let placeholder = VideoRecord::new(id.clone(), "", "");
        let record = index.get(id.as_str()).copied().unwrap_or(&placeholder);
        match resolve_conflict(record, labels, resolver) {
            Ok(r) => {
                out.insert(id.clone(), r);
            }
            Err(AnalysisError::UnresolvedConflict { .. }) => unresolved.push(id.clone()),
            Err(e) => return Err(analysis_failure(e)),
        }
    }
    Ok((out, unresolved))
}

pub fn analyze(
    labels: &[LabelRecord],
    dataset: Option<&Dataset>,
    graph_path: Option<&Path>,
    resolver: &ConflictResolver<'_>,
) -> Result<AnalysisOutput, Failure> {
    if labels.is_empty() {
        return Err(Failure::data("labels file is empty"));
    }
    let pairs: BTreeMap<(String, MythId), StanceLabel> =
        labels.iter().map(|l| ((l.video_id.clone(), l.myth), l.label)).collect();
    let per_video = labels_by_video(labels.iter().map(|l| (l.video_id.as_str(), l.myth, l.label)));
    let (resolved, unresolved) = resolve_all(&per_video, dataset, resolver)?;
    if !unresolved.is_empty() {
        warn!(count = unresolved.len(), "conflicting videos left unresolved; pass --overrides or configure a judge");
    }
    let overall: BTreeMap<String, StanceLabel> = resolved.iter().map(|(k, v)| (k.clone(), v.label)).collect();
    let mut provenance = BTreeMap::new();
    for r in resolved.values() {
        let key = serde_json::to_value(r.provenance).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        *provenance.entry(key).or_insert(0) += 1;
    }

    let mut notices = Vec::new();
    let transitions = match graph_path {
        Some(p) => {
            let graph = load_graph(p).map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("loading {}", p.display()))))?;
            let issues = graph.validate(None);
            if !issues.is_empty() {
                notices.push(format!("graph has {} structural issues (first: {:?})", issues.len(), issues[0]));
            }
            Some(transition_analysis(&graph, &overall))
        }
        None => {
            notices.push("no recommendation graph given; transitions skipped".into());
            None
        }
    };

    Ok(AnalysisOutput {
        videos: per_video.len(),
        by_myth: label_distribution(&pairs, &overall, dataset, GroupBy::Myth),
        overall: label_distribution(&pairs, &overall, dataset, GroupBy::Overall),
        by_topic: label_distribution(&pairs, &overall, dataset, GroupBy::Topic),
        by_filter: label_distribution(&pairs, &overall, dataset, GroupBy::Filter),
        provenance,
        unresolved,
        transitions,
        notices,
    })
}

fn load_overrides(path: &Path) -> Result<BTreeMap<String, StanceLabel>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Data)
}

pub fn execute(globals: &GlobalArgs, args: &AnalyzeArgs) -> Result<(), Failure> {
    let mut cfg = globals.load_config()?;
    if let Some(p) = &args.overrides {
        cfg.data.overrides = Some(p.clone());
    }
    let labels_path = require(&globals.labels, "labels file", "--labels")?;
    let labels = read_labels(labels_path).map_err(|e| Failure::Data(e.into()))?;
    let dataset = cfg.data.dataset.as_deref().map(read_dataset).transpose()?;
    let overrides = cfg.data.overrides.as_deref().map(load_overrides).transpose()?.unwrap_or_default();
    let judge = build_oracle(&cfg, globals.oracle_token.clone())?;
    let resolver = ConflictResolver { overrides, judge: judge.as_ref().map(|j| j.as_judge()) };

    let output = analyze(&labels, dataset.as_ref(), cfg.data.graph.as_deref(), &resolver)?;

    let mut inputs = vec![labels_path];
    inputs.extend(cfg.data.dataset.as_deref());
    inputs.extend(cfg.data.graph.as_deref());
    inputs.extend(cfg.data.overrides.as_deref());
    let fp = cfg.fingerprint(&inputs)?;
    let dir = cfg.run_dir("analyze", &fp)?;
    write_json(&dir.join("analysis.json"), &output)?;
    let text = output.to_text();
    std::fs::write(dir.join("analysis.txt"), &text)
        .with_context(|| format!("writing {}", dir.display()))
        .map_err(Failure::Other)?;

    if globals.json {
        print_json(&output);
    } else {
        print!("{text}");
    }
    Ok(())
}
