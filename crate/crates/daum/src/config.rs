//! Run configuration: one TOML file driving every pipeline stage.
//!
//! Every field has a default, unknown keys are rejected, and the effective
//! config hashes to a hex digest that output files carry so any artifact can
//! be traced back to the exact configuration that produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::StudentConfig;
use crate::error::{Error, Result};
use crate::intercept::RewardConfig;
use crate::ple::PleConfig;
use crate::swag::SwagScope;
use crate::synth::FunnelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of the dataset used for training; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "split.train_fraction must lie strictly in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwagConfig {
    /// Number of late-training snapshots kept in the ring buffer.
    pub k_small: usize,
    /// Deviation columns retained for the low-rank covariance term.
    pub rank: usize,
    pub scope: SwagScope,
}

impl Default for SwagConfig {
    fn default() -> Self {
        Self { k_small: 8, rank: 4, scope: SwagScope::All }
    }
}

impl SwagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_small < 2 {
            return Err(Error::config("swag.k_small must be >= 2".to_string()));
        }
        if self.rank == 0 || self.rank > self.k_small - 1 {
            return Err(Error::config(format!(
                "swag.rank must be in 1..={}, got {}",
                self.k_small - 1,
                self.rank
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Weight samples per prediction.
    pub m_samples: usize,
    /// Absolute variance threshold for pass decisions; exclusive with
    /// `pass_ratio`.
    pub tau: Option<f64>,
    /// Pass the top quantile of predictive variance; exclusive with `tau`.
    /// When neither is set the effective rule is a pass ratio of 0.1.
    pub pass_ratio: Option<f64>,
    /// Task whose uncertainty drives passing.
    pub pass_task: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { m_samples: 33, tau: None, pass_ratio: None, pass_task: 0, seed: 0 }
    }
}

/// The effective pass rule an inference section resolves to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PassRule {
    Threshold(f64),
    Ratio(f64),
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_samples < 2 {
            return Err(Error::config("inference.m_samples must be >= 2".to_string()));
        }
        match (self.tau, self.pass_ratio) {
            (Some(_), Some(_)) => Err(Error::config(
                "inference.tau and inference.pass_ratio are mutually exclusive".to_string(),
            )),
            (Some(t), None) if !(t >= 0.0) => {
                Err(Error::config(format!("inference.tau must be >= 0, got {t}")))
            }
            (None, Some(r)) if !(0.0..=1.0).contains(&r) => Err(Error::config(format!(
                "inference.pass_ratio must lie in [0,1], got {r}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn pass_rule(&self) -> PassRule {
        match (self.tau, self.pass_ratio) {
            (Some(t), None) => PassRule::Threshold(t),
            (None, Some(r)) => PassRule::Ratio(r),
            _ => PassRule::Ratio(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterceptConfig {
    pub reward: RewardConfig,
    /// Budgeted interception rate: fraction of traffic intercepted.
    pub rate: f64,
}

impl Default for InterceptConfig {
    fn default() -> Self {
        Self { reward: RewardConfig::default(), rate: 0.1 }
    }
}

impl InterceptConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "intercept.rate must lie in [0,1], got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub student: StudentConfig,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            student: StudentConfig::default(),
            train: TrainConfig { learning_rate: 0.1, epochs: 12, batch_size: 512, seed: 0 },
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pass-ratio grid for the passing experiments.
    pub ratios: Vec<f64>,
    /// Task whose uncertainty ranks instances for passing.
    pub pass_task: usize,
    /// Task whose residual predictions are scored.
    pub eval_task: usize,
    /// Histogram bins for the teacher/student uncertainty comparison.
    pub n_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
            pass_task: 0,
            eval_task: 0,
            n_bins: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::config("eval.ratios must be non-empty".to_string()));
        }
        for &r in &self.ratios {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("eval ratio {r} outside [0,1]")));
            }
        }
        if self.pass_task >= n_tasks || self.eval_task >= n_tasks {
            return Err(Error::config(format!(
                "eval tasks must be < {n_tasks} (pass_task {}, eval_task {})",
                self.pass_task, self.eval_task
            )));
        }
        if self.n_bins == 0 {
            return Err(Error::config("eval.n_bins must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmups: usize,
    /// Sample count for the headline teacher-vs-student comparison.
    pub m_samples: usize,
    /// Sample counts for the latency-vs-M scaling fit.
    pub m_grid: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            repetitions: 30,
            warmups: 5,
            m_samples: 11,
            m_grid: vec![1, 2, 4, 8, 16],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.repetitions == 0 {
            return Err(Error::config(
                "bench.batch_size and bench.repetitions must be >= 1".to_string(),
            ));
        }
        if self.m_samples < 2 {
            return Err(Error::config("bench.m_samples must be >= 2".to_string()));
        }
        if self.m_grid.len() < 3 {
            return Err(Error::config(
                "bench.m_grid needs at least 3 points for a scaling fit".to_string(),
            ));
        }
        Ok(())
    }
}

/// Theory-lab sweep controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// SGD steps per stationary-variance grid cell.
    pub steps: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { steps: 200_000, seed: 0 }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("theory.steps must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// The full run configuration, one section per pipeline stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: FunnelConfig,
    pub split: SplitConfig,
    pub model: PleConfig,
    pub train: TrainConfig,
    pub swag: SwagConfig,
    pub inference: InferenceConfig,
    pub intercept: InterceptConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub theory: TheoryConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.data.feature_dim {
            return Err(Error::config(format!(
                "model.input_dim {} does not match data.feature_dim {}",
                self.model.input_dim, self.data.feature_dim
            )));
        }
        self.train.validate()?;
        self.swag.validate()?;
        if self.train.epochs < self.swag.k_small {
            return Err(Error::config(format!(
                "train.epochs {} cannot fill a swag buffer of {} snapshots",
                self.train.epochs, self.swag.k_small
            )));
        }
        self.inference.validate()?;
        if self.inference.pass_task >= self.model.n_tasks {
            return Err(Error::config(format!(
                "inference.pass_task must be < {}",
                self.model.n_tasks
            )));
        }
        self.intercept.validate()?;
        self.distill.validate()?;
        if self.distill.student.input_dim != self.data.feature_dim
            || self.distill.student.n_tasks != self.model.n_tasks
        {
            return Err(Error::config(
                "distill.student dimensions disagree with data/model sections".to_string(),
            ));
        }
        self.eval.validate(self.model.n_tasks)?;
        self.bench.validate()?;
        self.theory.validate()
    }

    /// Parse and validate from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Canonical TOML rendering of the effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config render: {e}")))
    }

    /// Hex SHA-256 of the canonical rendering; recorded in every output file.
    pub fn sha256(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml()?.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}
