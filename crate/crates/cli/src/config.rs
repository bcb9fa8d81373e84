use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use oodmpc::conformal::CalibrationTarget;
use oodmpc::data::SynthParams;
use oodmpc::nn::TrainConfig;
use oodmpc::sim::{BatchPlan, ControllerMode, CoverageConfig, ScenarioConfig};

use crate::Command;

/// Input and output locations. Unset inputs default to the artifact the
/// producing command writes into `output_dir`, so commands chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Paths {
    fn or_output(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.output_dir.join(name))
    }

    pub fn data(&self) -> PathBuf {
        self.or_output(&self.data, "trajectories.csv")
    }

    pub fn weights(&self) -> PathBuf {
        self.or_output(&self.weights, "weights.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.or_output(&self.scores, "calibration_scores.csv")
    }

    pub fn test_data(&self) -> PathBuf {
        self.or_output(&self.test_data, "test_trajectories.csv")
    }

    pub fn detector(&self) -> PathBuf {
        self.or_output(&self.detector, "detector.json")
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub count: usize,
    pub params: SynthParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            count: 110,
            params: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub ensemble_size: usize,
    pub n_test: usize,
    /// Mirror upward crossings before splitting.
    pub reflect: bool,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            ensemble_size: 10,
            n_test: 10,
            reflect: true,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConformalSection {
    pub delta: Option<f64>,
    pub k: Option<usize>,
    /// Decimals the threshold is rounded up at; `null` keeps it exact.
    pub round_decimals: Option<u32>,
}

impl Default for ConformalSection {
    fn default() -> Self {
        ConformalSection {
            delta: Some(0.0396),
            k: None,
            round_decimals: Some(3),
        }
    }
}

impl ConformalSection {
    pub fn target(&self) -> Option<CalibrationTarget> {
        match (self.delta, self.k) {
            (Some(d), None) => Some(CalibrationTarget::Delta(d)),
            (None, Some(k)) => Some(CalibrationTarget::Index(k)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub mode: ControllerMode,
    pub fraud: bool,
    pub trial_seed: u64,
    /// Index into the test trajectories.
    pub source: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            mode: ControllerMode::Soda,
            fraud: true,
            trial_seed: 0,
            source: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaSection {
    pub n: usize,
    pub delta: f64,
    pub x1: f64,
    pub x2: f64,
    pub p_target: f64,
    pub precision: usize,
}

impl Default for BetaSection {
    fn default() -> Self {
        BetaSection {
            n: 1000,
            delta: 0.04,
            x1: 0.95,
            x2: 0.97,
            p_target: 0.89,
            precision: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSection {
    pub predictions: Option<PathBuf>,
    /// Predictions whose per-step scores calibrate the threshold.
    pub calibration: Option<PathBuf>,
    pub k: usize,
    /// Used when no calibration file is given.
    pub threshold: Option<f64>,
}

impl Default for GmmSection {
    fn default() -> Self {
        GmmSection {
            predictions: None,
            calibration: None,
            k: 97,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub conformal: ConformalSection,
    pub scenario: ScenarioConfig,
    pub simulate: SimulateSection,
    pub batch: BatchPlan,
    pub coverage: CoverageConfig,
    pub beta: BetaSection,
    pub gmm: GmmSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            paths: Paths {
                output_dir: PathBuf::from("out"),
                ..Paths::default()
            },
            synth: SynthSection::default(),
            train: TrainSection::default(),
            conformal: ConformalSection::default(),
            scenario: ScenarioConfig::default(),
            simulate: SimulateSection::default(),
            batch: BatchPlan::default(),
            coverage: CoverageConfig::default(),
            beta: BetaSection::default(),
            gmm: GmmSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the config embedded in a run manifest.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("config_digest").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config in {}", path.display()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn require_file(v: &mut Vec<String>, field: &str, path: &Path) {
    if !path.is_file() {
        v.push(format!("{field}: input file {} does not exist", path.display()));
    }
}

fn positive(v: &mut Vec<String>, field: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        v.push(format!("{field}: must be > 0"));
    }
}

fn unit_open(v: &mut Vec<String>, field: &str, x: f64) {
    if !(x > 0.0 && x < 1.0) {
        v.push(format!("{field}: delta in (0,1)"));
    }
}

/// Every violated constraint for running `command`, each naming its field.
pub fn validate_config(cfg: &RunConfig, command: &Command) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.threads == Some(0) {
        v.push("threads: must be >= 1".into());
    }
    if cfg.paths.output_dir.as_os_str().is_empty() {
        v.push("paths.output_dir: must be set".into());
    } else if cfg.paths.output_dir.exists() && !cfg.paths.output_dir.is_dir() {
        v.push(format!("paths.output_dir: {} is not a directory", cfg.paths.output_dir.display()));
    }
    v.extend(cfg.synth.params.violations().into_iter().map(|m| format!("synth.params.{m}")));
    if cfg.synth.count == 0 {
        v.push("synth.count: must be > 0".into());
    }
    if cfg.train.ensemble_size < 2 {
        v.push("train.ensemble_size: must be >= 2".into());
    }
    v.extend(cfg.train.optimizer.violations());
    match (cfg.conformal.delta, cfg.conformal.k) {
        (Some(d), None) => unit_open(&mut v, "conformal.delta", d),
        (None, Some(0)) => v.push("conformal.k: must be >= 1".into()),
        (None, Some(_)) => {}
        _ => v.push("conformal: set exactly one of delta and k".into()),
    }
    v.extend(cfg.scenario.violations());
    v.extend(cfg.coverage.violations());
    unit_open(&mut v, "beta.delta", cfg.beta.delta);
    if !(0.0 <= cfg.beta.x1 && cfg.beta.x1 < 1.0 - cfg.beta.delta && 1.0 - cfg.beta.delta < cfg.beta.x2 && cfg.beta.x2 <= 1.0)
    {
        v.push("beta.x1/beta.x2: need 0 <= x1 < 1 - delta < x2 <= 1".into());
    }
    if !(cfg.beta.p_target > 0.0 && cfg.beta.p_target < 1.0) {
        v.push("beta.p_target: must be in (0,1)".into());
    }
    if cfg.beta.precision == 0 {
        v.push("beta.precision: must be >= 1".into());
    }
    if cfg.gmm.k == 0 {
        v.push("gmm.k: must be >= 1".into());
    }
    if let Some(c) = cfg.gmm.threshold {
        positive(&mut v, "gmm.threshold", c);
    }

    let p = &cfg.paths;
    match command {
        Command::Train => require_file(&mut v, "paths.data", &p.data()),
        Command::Calibrate => require_file(&mut v, "paths.scores", &p.scores()),
        Command::Simulate(_) | Command::Batch(_) => {
            require_file(&mut v, "paths.weights", &p.weights());
            require_file(&mut v, "paths.detector", &p.detector());
            require_file(&mut v, "paths.test_data", &p.test_data());
        }
        Command::Coverage(_) => require_file(&mut v, "paths.weights", &p.weights()),
        Command::GmmDetect => {
            match &cfg.gmm.predictions {
                Some(path) => require_file(&mut v, "gmm.predictions", path),
                None => v.push("gmm.predictions: required for gmm-detect".into()),
            }
            match &cfg.gmm.calibration {
                Some(path) => require_file(&mut v, "gmm.calibration", path),
                None if cfg.gmm.threshold.is_none() => {
                    v.push("gmm.calibration: set a calibration file or gmm.threshold".into())
                }
                None => {}
            }
        }
        Command::Synth | Command::BetaProb(_) | Command::PlanCalibration(_) => {}
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::BetaArgs;

    fn beta_cmd() -> Command {
        Command::BetaProb(BetaArgs {
            n: None,
            delta: None,
            x1: None,
            x2: None,
        })
    }

    #[test]
    fn default_config_is_valid() {
        assert!(validate_config(&RunConfig::default(), &Command::Synth).is_empty());
        assert!(validate_config(&RunConfig::default(), &beta_cmd()).is_empty());
    }

    #[test]
    fn bad_delta_is_named() {
        let mut cfg = RunConfig::default();
        cfg.conformal.delta = Some(1.5);
        let v = validate_config(&cfg, &Command::Synth);
        assert!(v.iter().any(|m| m == "conformal.delta: delta in (0,1)"), "{v:?}");
    }

    #[test]
    fn missing_training_data_names_the_path_field() {
        let mut cfg = RunConfig::default();
        cfg.paths.output_dir = PathBuf::from("/nonexistent/for/sure");
        let v = validate_config(&cfg, &Command::Train);
        assert!(v.iter().any(|m| m.starts_with("paths.data:")), "{v:?}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
