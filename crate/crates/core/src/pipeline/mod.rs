//! Triage orchestration: score every (record, myth) pair locally, apply the
//! myth's deferral policy and send deferred pairs to the oracle.

mod checkpoint;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::deferral::{DeferralError, DeferralPolicy, DeferralReason};
use crate::domain::{Dataset, Myth, MythId, StanceLabel, VideoRecord};
use crate::scorers::{Oracle, OracleError, PredictionSource, ProbabilityVector, Scorer, ScorerError, TokenUsage};
use crate::seeding::SeedMixer;

use checkpoint::Checkpoint;

pub type PairKey = (String, MythId);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no deferral policy for {0}")]
    MissingPolicy(MythId),
    #[error("local scorer failed on {video_id}/{myth}: {source}")]
    Scorer { video_id: String, myth: MythId, source: ScorerError },
    #[error("oracle failed on {video_id}/{myth}: {source}")]
    Oracle { video_id: String, myth: MythId, source: OracleError },
    #[error(transparent)]
    Deferral(#[from] DeferralError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint belongs to run {found}, current run is {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("stopped after {completed} of {total} pairs")]
    Interrupted { completed: usize, total: usize },
    #[error("result has no predictions")]
    EmptyResult,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// What to do when the oracle still fails after its retries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleFailurePolicy {
    /// Keep the local label and flag the pair unresolved.
    #[default]
    Fallback,
    /// Stop the run; completed pairs stay in the checkpoint.
    Abort,
}

#[derive(Debug, Clone)]
pub struct TriageConfig {
    /// Local-scoring threads; 0 uses all cores.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Stop with `Interrupted` once this many pairs are complete.
    pub stop_after: Option<usize>,
    pub on_oracle_failure: OracleFailurePolicy,
    /// Base seed for MC-dropout passes.
    pub mc_seed: u64,
    /// Extra material mixed into the run fingerprint (scorer and oracle settings).
    pub fingerprint_salt: String,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            checkpoint: None,
            checkpoint_every: 500,
            stop_after: None,
            on_oracle_failure: OracleFailurePolicy::Fallback,
            mc_seed: 0,
            fingerprint_salt: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub video_id: String,
    pub myth: MythId,
    pub label: StanceLabel,
    pub source: PredictionSource,
    pub local_probs: ProbabilityVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deferral_reason: Option<DeferralReason>,
    /// Deferred, but the oracle failed and the local label was kept.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unresolved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_usage: Option<TokenUsage>,
}

/// One row of the labels file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub video_id: String,
    pub myth: MythId,
    pub label: StanceLabel,
    pub source: PredictionSource,
    pub probs: ProbabilityVector,
    #[serde(default)]
    pub deferral_reason: Option<DeferralReason>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unresolved: bool,
}

impl From<&FinalLabel> for LabelRecord {
    fn from(f: &FinalLabel) -> Self {
        Self {
            video_id: f.video_id.clone(),
            myth: f.myth,
            label: f.label,
            source: f.source,
            probs: f.local_probs,
            deferral_reason: f.deferral_reason,
            unresolved: f.unresolved,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub n_items: usize,
    pub n_predictions: usize,
    pub n_deferred: usize,
    pub n_unresolved: usize,
    /// Answered oracle calls behind the result, including resumed pairs.
    pub oracle_calls: usize,
    /// Oracle calls answered during this invocation.
    #[serde(default)]
    pub new_oracle_calls: usize,
    pub oracle_input_tokens: u64,
    pub oracle_output_tokens: u64,
    /// Pairs taken from a checkpoint rather than computed in this invocation.
    pub resumed_pairs: usize,
    pub wall_seconds: f64,
}

impl Counters {
    pub fn deferral_rate(&self) -> Result<f64, PipelineError> {
        if self.n_predictions == 0 {
            return Err(PipelineError::EmptyResult);
        }
        Ok(self.n_deferred as f64 / self.n_predictions as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageResult {
    pub fingerprint: String,
    pub per_item: BTreeMap<PairKey, FinalLabel>,
    pub counters: Counters,
}

pub fn deferral_rate(result: &TriageResult) -> Result<f64, PipelineError> {
    result.counters.deferral_rate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub fingerprint: String,
    pub counters: Counters,
    pub deferral_rate: Option<f64>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_error(path, e))
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
}

impl TriageResult {
    fn from_labels(fingerprint: String, n_items: usize, per_item: BTreeMap<PairKey, FinalLabel>) -> Self {
        let mut c = Counters { n_items, n_predictions: per_item.len(), ..Default::default() };
        for f in per_item.values() {
            if f.deferral_reason.is_some() {
                c.n_deferred += 1;
            }
            if f.unresolved {
                c.n_unresolved += 1;
            }
            if let Some(u) = f.oracle_usage {
                c.oracle_calls += 1;
                c.oracle_input_tokens += u.input_tokens;
                c.oracle_output_tokens += u.output_tokens;
            }
        }
        Self { fingerprint, per_item, counters: c }
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelRecord> + '_ {
        self.per_item.values().map(LabelRecord::from)
    }

    /// Labels file contents: one JSON object per pair, ordered by (video_id, myth).
    pub fn labels_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.labels() {
            out.push_str(&serde_json::to_string(&row).expect("label serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_labels(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        std::fs::write(path, self.labels_jsonl()).map_err(|e| io_error(path, e))
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            fingerprint: self.fingerprint.clone(),
            counters: self.counters.clone(),
            deferral_rate: self.counters.deferral_rate().ok(),
        }
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.manifest()).map_err(|e| io_error(path, e))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
    }
}

/// Read a labels file written by [`TriageResult::write_labels`].
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>, PipelineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_error(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Hash of everything that determines the labels: records, myths, policies
/// and the caller's salt.
pub fn run_fingerprint(
    dataset: &Dataset,
    myths: &[Myth],
    policies: &BTreeMap<MythId, DeferralPolicy>,
    salt: &str,
) -> String {
    let mut h = Sha256::new();
    for r in &dataset.records {
        h.update(serde_json::to_vec(r).expect("record serializes"));
        h.update(b"\n");
    }
    h.update(serde_json::to_vec(myths).expect("myths serialize"));
    h.update(serde_json::to_vec(policies).expect("policies serialize"));
    h.update(salt.as_bytes());
    hex::encode(h.finalize())
}

struct Runner<'a> {
    scorer: &'a dyn Scorer,
    oracle: &'a dyn Oracle,
    config: &'a TriageConfig,
}

impl Runner<'_> {
    fn process(&self, record: &VideoRecord, myth: &Myth, policy: &DeferralPolicy) -> Result<FinalLabel, PipelineError> {
        let scorer_err = |source| PipelineError::Scorer { video_id: record.video_id.clone(), myth: myth.id, source };
        let probs = self.scorer.score(record, myth.id).map_err(scorer_err)?;
        let samples = if policy.needs_mc_samples() {
            let seed = SeedMixer::new(self.config.mc_seed).str(&record.video_id).u64(myth.id.index().into()).finish();
            Some(self.scorer.score_stochastic(record, myth.id, policy.mc_passes, seed).map_err(scorer_err)?)
        } else {
            None
        };
        let reason = policy.decide(&probs, samples.as_deref())?;
        let mut out = FinalLabel {
            video_id: record.video_id.clone(),
            myth: myth.id,
            label: probs.argmax(),
            source: PredictionSource::LocalScorer,
            local_probs: probs,
            deferral_reason: reason,
            unresolved: false,
            oracle_usage: None,
        };
        if reason.is_none() {
            return Ok(out);
        }
        match self.oracle.label(record, myth) {
            Ok(verdict) => {
                out.label = verdict.label;
                out.source = PredictionSource::Oracle;
                out.oracle_usage = Some(verdict.token_usage);
            }
            Err(source) => match self.config.on_oracle_failure {
                OracleFailurePolicy::Fallback => {
                    warn!(video_id = %record.video_id, myth = %myth.id, "oracle failed, keeping local label: {source}");
                    out.unresolved = true;
                }
                OracleFailurePolicy::Abort => {
                    return Err(PipelineError::Oracle { video_id: record.video_id.clone(), myth: myth.id, source });
                }
            },
        }
        Ok(out)
    }
}

/// Label every (record, myth) pair. The result depends only on the inputs,
/// never on `config.workers` or scheduling.
pub fn run_triage(
    dataset: &Dataset,
    myths: &[Myth],
    scorer: &dyn Scorer,
    oracle: &dyn Oracle,
    policies: &BTreeMap<MythId, DeferralPolicy>,
    config: &TriageConfig,
) -> Result<TriageResult, PipelineError> {
    let started = Instant::now();
    for m in myths {
        policies.get(&m.id).ok_or(PipelineError::MissingPolicy(m.id))?.validate()?;
    }
    let fingerprint = run_fingerprint(dataset, myths, policies, &config.fingerprint_salt);

    let (mut checkpoint, mut done) = match &config.checkpoint {
        Some(path) => {
            let (cp, done) = Checkpoint::open(path, &fingerprint)?;
            (Some(cp), done)
        }
        None => (None, BTreeMap::new()),
    };
    let resumed = done.len();
    let resumed_calls = done.values().filter(|f| f.oracle_usage.is_some()).count();
    let total = dataset.len() * myths.len();

    let pending: Vec<(&VideoRecord, &Myth)> = dataset
        .records
        .iter()
        .flat_map(|r| myths.iter().map(move |m| (r, m)))
        .filter(|(r, m)| !done.contains_key(&(r.video_id.clone(), m.id)))
        .collect();
    if resumed > 0 {
        info!(resumed, remaining = pending.len(), "resuming from checkpoint");
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let runner = Runner { scorer, oracle, config };
    let chunk_size = config.checkpoint_every.max(1);

    let mut rest = pending.as_slice();
    while !rest.is_empty() {
        let mut take = chunk_size.min(rest.len());
        if let Some(stop) = config.stop_after {
            if done.len() >= stop {
                return Err(PipelineError::Interrupted { completed: done.len(), total });
            }
            take = take.min(stop - done.len());
        }
        let (chunk, tail) = rest.split_at(take);
        rest = tail;
        let results: Vec<Result<FinalLabel, PipelineError>> = pool.install(|| {
            chunk.par_iter().map(|(r, m)| runner.process(r, m, &policies[&m.id])).collect()
        });
        let mut first_err = None;
        let mut finished = Vec::with_capacity(results.len());
        for res in results {
            match res {
                Ok(label) => finished.push(label),
                Err(e) if first_err.is_none() => first_err = Some(e),
                Err(_) => {}
            }
        }
        if let Some(cp) = checkpoint.as_mut() {
            cp.append(&finished)?;
        }
        for label in finished {
            done.insert((label.video_id.clone(), label.myth), label);
        }
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    if let Some(stop) = config.stop_after {
        if done.len() < total && done.len() >= stop {
            return Err(PipelineError::Interrupted { completed: done.len(), total });
        }
    }

    let mut result = TriageResult::from_labels(fingerprint, dataset.len(), done);
    result.counters.resumed_pairs = resumed;
    result.counters.new_oracle_calls = result.counters.oracle_calls - resumed_calls;
    result.counters.wall_seconds = started.elapsed().as_secs_f64();
    Ok(result)
}
