use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use triage_core::costmodel::CostParams;
use triage_core::deferral::{CalibrationObjective, CalibrationOptions, DeferralMode};
use triage_core::domain::{default_myths, Myth, MythId};
use triage_core::pipeline::OracleFailurePolicy;
use triage_core::scorers::{HttpOracleConfig, RemoteScorerConfig, SimulatedScorerSpec};

use crate::error::Failure;

/// Campaign configuration, read from TOML. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    /// Root for run directories.
    pub out: PathBuf,
    /// Myths to label; empty means all eight.
    pub myths: Vec<MythId>,
    /// Replacement myth definitions, keyed by id.
    pub myth_definitions: BTreeMap<MythId, String>,
    pub data: DataConfig,
    pub scorer: ScorerConfig,
    pub oracle: OracleConfig,
    pub deferral: DeferralConfig,
    pub calibration: CalibrationConfig,
    pub cost: CostParams,
    pub pipeline: PipelineConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            myths: Vec::new(),
            myth_definitions: BTreeMap::new(),
            data: DataConfig::default(),
            scorer: ScorerConfig::default(),
            oracle: OracleConfig::default(),
            deferral: DeferralConfig::default(),
            calibration: CalibrationConfig::default(),
            cost: CostParams::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub validation: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub policies: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    /// JSON object video_id → stance (-1, 0, 1) overriding conflict resolution.
    pub overrides: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Gold-driven stand-in; needs gold labels on every scored record.
    Simulated(SimulatedScorerSpec),
    /// Recorded probabilities (JSONL of video_id, myth_index, probs, passes).
    Replay { path: PathBuf },
    Remote(RemoteScorerConfig),
    /// Same vector for every pair.
    Stub { probs: [f64; 3] },
}

impl Default for ScorerConfig {
    fn default() -> Self {
        let mut spec = SimulatedScorerSpec::diagonal(0.85, 0.85, 0.55, 0);
        spec.confidence_jitter = 0.15;
        ScorerConfig::Simulated(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub endpoint: Option<String>,
    /// Replay fixture file; takes precedence over `endpoint`.
    pub replay: Option<PathBuf>,
    pub shots: u32,
    pub temperature: Option<f64>,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_inflight: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let d = HttpOracleConfig::default();
        Self {
            endpoint: None,
            replay: None,
            shots: d.shots,
            temperature: d.temperature,
            max_attempts: d.max_attempts,
            initial_backoff_ms: d.initial_backoff_ms,
            timeout_ms: d.timeout_ms,
            max_inflight: d.max_inflight,
        }
    }
}

impl OracleConfig {
    pub fn http(&self, endpoint: &str, token: Option<String>) -> HttpOracleConfig {
        HttpOracleConfig {
            endpoint: endpoint.to_string(),
            token,
            shots: self.shots,
            temperature: self.temperature,
            max_attempts: self.max_attempts,
            initial_backoff_ms: self.initial_backoff_ms,
            timeout_ms: self.timeout_ms,
            max_inflight: self.max_inflight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeferralConfig {
    pub mode: DeferralMode,
    /// Per-myth mode overrides.
    pub per_myth: BTreeMap<MythId, DeferralMode>,
    pub vet_cutoff: f64,
    pub mc_passes: usize,
}

impl Default for DeferralConfig {
    fn default() -> Self {
        Self { mode: DeferralMode::MspPlusVet, per_myth: BTreeMap::new(), vet_cutoff: 0.8, mc_passes: 20 }
    }
}

impl DeferralConfig {
    pub fn mode_for(&self, myth: MythId) -> DeferralMode {
        self.per_myth.get(&myth).copied().unwrap_or(self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub grid_step: f64,
    pub entropy_normalized: bool,
    /// Maximise cascade F1 (deferred items scored with oracle labels, gold
    /// standing in for the oracle) instead of retained-only F1.
    pub cascade_objective: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { grid_step: 0.01, entropy_normalized: false, cascade_objective: false }
    }
}

impl CalibrationConfig {
    pub fn options(&self) -> CalibrationOptions {
        CalibrationOptions {
            grid_step: self.grid_step,
            entropy_normalized: self.entropy_normalized,
            objective: if self.cascade_objective {
                CalibrationObjective::CascadeF1 { oracle_labels: None }
            } else {
                CalibrationObjective::RetainedF1
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workers: usize,
    pub checkpoint_every: usize,
    pub on_oracle_failure: OracleFailurePolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { workers: 0, checkpoint_every: 500, on_oracle_failure: OracleFailurePolicy::Fallback }
    }
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?;
        toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Config)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let check = || -> anyhow::Result<()> {
            self.cost.validate()?;
            let step = self.calibration.grid_step;
            if !(step > 0.0 && step <= 1.0) {
                bail!("calibration.grid_step {step} outside (0, 1]");
            }
            if !(self.deferral.vet_cutoff > 0.0 && self.deferral.vet_cutoff <= 1.0) {
                bail!("deferral.vet_cutoff {} outside (0, 1]", self.deferral.vet_cutoff);
            }
            if self.deferral.mc_passes == 0 {
                bail!("deferral.mc_passes must be at least 1");
            }
            if self.pipeline.checkpoint_every == 0 {
                bail!("pipeline.checkpoint_every must be at least 1");
            }
            if let ScorerConfig::Simulated(spec) = &self.scorer {
                spec.validate()?;
            }
            Ok(())
        };
        check().map_err(Failure::Config)
    }

    pub fn myths(&self) -> Vec<Myth> {
        let mut myths = default_myths();
        if !self.myths.is_empty() {
            myths.retain(|m| self.myths.contains(&m.id));
        }
        for m in &mut myths {
            if let Some(d) = self.myth_definitions.get(&m.id) {
                m.definition = d.clone();
            }
        }
        myths
    }

    /// Hash over the semantics-bearing fields and the contents of the given
    /// input files. Output location, worker counts and concurrency caps are
    /// left out because they do not change results.
    pub fn fingerprint(&self, inputs: &[&Path]) -> Result<String, Failure> {
        self.fingerprint_salted(inputs, "")
    }

    /// [`CampaignConfig::fingerprint`] with command-specific settings mixed in.
    pub fn fingerprint_salted(&self, inputs: &[&Path], salt: &str) -> Result<String, Failure> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out");
            obj.remove("data");
            if let Some(p) = obj.get_mut("pipeline").and_then(|v| v.as_object_mut()) {
                p.remove("workers");
                p.remove("checkpoint_every");
            }
            if let Some(o) = obj.get_mut("oracle").and_then(|v| v.as_object_mut()) {
                o.remove("max_inflight");
                o.remove("timeout_ms");
                o.remove("initial_backoff_ms");
                o.remove("replay");
            }
        }
        let mut h = Sha256::new();
        h.update(value.to_string().as_bytes());
        h.update(salt.as_bytes());
        for path in inputs {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Data)?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize())[..16].to_string())
    }

    /// `<out>/<command>-<fingerprint>`, created if needed.
    pub fn run_dir(&self, command: &str, fingerprint: &str) -> Result<PathBuf, Failure> {
        let dir = self.out.join(format!("{command}-{fingerprint}"));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Other)?;
        dir.canonicalize()
            .with_context(|| format!("resolving {}", dir.display()))
            .map_err(Failure::Other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_document() {
        let text = r#"
            seed = 7
            out = "runs"
            myths = ["M1", "M3"]

            [data]
            dataset = "test.jsonl"

            [scorer]
            kind = "simulated"
            confusion = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]
            confidence_when_correct = 0.9
            confidence_when_wrong = 0.5
            seed = 7

            [oracle]
            endpoint = "http://localhost:9000/"

            [deferral]
            mode = "msp"
            per_myth = { M3 = "vet" }

            [calibration]
            grid_step = 0.05

            [cost]
            expert_hourly_wage = 15.0
        "#;
        let cfg: CampaignConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.myths().len(), 2);
        assert_eq!(cfg.deferral.mode_for(MythId::new(3).unwrap()), DeferralMode::Vet);
        assert_eq!(cfg.deferral.mode_for(MythId::new(1).unwrap()), DeferralMode::Msp);
        assert_eq!(cfg.cost.expert_hourly_wage, 15.0);
        assert_eq!(cfg.cost.oracle_seconds_per_call, 3.4);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(toml::from_str::<CampaignConfig>("sed = 1").is_err());
        let cfg = CampaignConfig {
            calibration: CalibrationConfig { grid_step: 0.0, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Failure::Config(_))));
    }

    #[test]
    fn fingerprint_ignores_workers_but_not_policy_settings() {
        let a = CampaignConfig::default();
        let mut b = a.clone();
        b.pipeline.workers = 16;
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(&[]).unwrap(), b.fingerprint(&[]).unwrap());
        b.deferral.vet_cutoff = 0.7;
        assert_ne!(a.fingerprint(&[]).unwrap(), b.fingerprint(&[]).unwrap());
    }
}
