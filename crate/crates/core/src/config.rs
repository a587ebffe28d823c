//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::Scheme;
use crate::sample::PlanMode;
use crate::schedule::{Preset, ScheduleSpec};
use crate::solver::OdeSolver;
use crate::train::{DbsmWeighting, LossWeighting, Metric, TrainingSchedule, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub schedule: Preset,
    #[serde(default)]
    pub window: Option<WindowSection>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub eps: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// pairs used to estimate endpoint statistics
    #[serde(default = "default_stats_samples")]
    pub stats_samples: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}
fn default_scheme() -> Scheme {
    Scheme::EdmStyle
}
fn default_stats_samples() -> usize {
    10_000
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: default_hidden(), scheme: default_scheme(), stats_samples: default_stats_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: TrainingSchedule,
    #[serde(default = "default_weighting")]
    pub weighting: LossWeighting,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_dbsm_weighting")]
    pub dbsm_weighting: DbsmWeighting,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// checkpoint to start from (optional for `cbt`)
    #[serde(default)]
    pub init: Option<PathBuf>,
    /// frozen data predictor (required for `distill`)
    #[serde(default)]
    pub teacher: Option<PathBuf>,
}

fn default_steps() -> u64 {
    2000
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}
fn default_schedule() -> TrainingSchedule {
    TrainingSchedule::ConstantGap { dt: 0.2 }
}
fn default_weighting() -> LossWeighting {
    LossWeighting::Unit
}
fn default_metric() -> Metric {
    Metric::SquaredL2
}
fn default_dbsm_weighting() -> DbsmWeighting {
    DbsmWeighting::Unit
}
fn default_log_every() -> u64 {
    100
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch(),
            lr: default_lr(),
            schedule: default_schedule(),
            weighting: default_weighting(),
            metric: default_metric(),
            dbsm_weighting: default_dbsm_weighting(),
            log_every: default_log_every(),
            init: None,
            teacher: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    /// checkpoint to sample from
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_nfe")]
    pub nfe: usize,
    #[serde(default = "default_plan")]
    pub plan: PlanMode,
    /// solver steps when sampling from a data predictor
    #[serde(default = "default_ode_steps")]
    pub ode_steps: usize,
    #[serde(default = "default_solver")]
    pub solver: OdeSolver,
    /// number of held-out conditioning inputs
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_nfe() -> usize {
    2
}
fn default_plan() -> PlanMode {
    PlanMode::Uniform
}
fn default_ode_steps() -> usize {
    100
}
fn default_solver() -> OdeSolver {
    OdeSolver::Ei
}
fn default_n() -> usize {
    2000
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            nfe: default_nfe(),
            plan: default_plan(),
            ode_steps: default_ode_steps(),
            solver: default_solver(),
            n: default_n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// samples to score; defaults to `samples.csv` in the output directory
    #[serde(default)]
    pub samples: Option<PathBuf>,
    #[serde(default = "default_projections")]
    pub n_projections: usize,
}

fn default_projections() -> usize {
    crate::eval::DEFAULT_PROJECTIONS
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: None, n_projections: default_projections() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        self.dataset.validate()?;
        self.train.schedule.validate()?;
        let w = self.window(&spec);
        if !(w.eps > 0.0 && w.gamma > 0.0 && w.eps + w.gamma < spec.horizon()) {
            return Err(Error::Config(format!("window {w:?} does not fit in (0, T)")));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden needs positive widths".into()));
        }
        if self.model.stats_samples < 2 {
            return Err(Error::Config("model.stats_samples must be at least 2".into()));
        }
        if self.sample.ode_steps == 0 || self.sample.n == 0 {
            return Err(Error::Config("sample.ode_steps and sample.n must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ScheduleSpec> {
        ScheduleSpec::preset(self.schedule)
    }

    pub fn window(&self, spec: &ScheduleSpec) -> Window {
        match self.window {
            Some(w) => Window { eps: w.eps, gamma: w.gamma },
            None => Window::for_spec(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("[schedule]\nid = \"brownian\"\n").unwrap();
        assert_eq!(cfg.model.hidden, vec![64, 64, 64]);
        assert_eq!(cfg.dataset.id(), "mixture2d-shifted");
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schema_violations_are_rejected() {
        assert!(ExperimentConfig::from_toml("[schedule]\nid = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nid = \"brownian\"\n[train]\nsteps = 1\nbogus = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nid = \"brownian\"\nsigma = -1.0\n").is_err());
    }
}
