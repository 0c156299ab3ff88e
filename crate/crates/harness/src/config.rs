//! Run configuration, loaded from a TOML file with one section per module.
//!
//! ```toml
//! [run]
//! environment = "surrogate"   # or "learner"
//! mode = "roar"               # or "sweep"
//! episodes = 3
//! seed = 7
//! out = "runs/demo"
//!
//! [episode]
//! horizon = 12
//! iterations_per_step = 50
//!
//! [agent]
//! epsilon_decay_steps = 200
//!
//! [surrogate]
//! noise_std = 0.05
//! ```
//!
//! Every field is optional; omitted values take their defaults.

use std::path::{Path, PathBuf};

use oar_core::augment::MethodPolicy;
use oar_core::{AgentConfig, EpisodeConfig, SurrogateParams, TaskParams};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EnvironmentKind {
    #[default]
    Surrogate,
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Roar,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub environment: EnvironmentKind,
    pub mode: Mode,
    pub episodes: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Fixed OAR values evaluated in sweep mode.
    pub sweep_betas: Vec<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            environment: EnvironmentKind::Surrogate,
            mode: Mode::Roar,
            episodes: 3,
            seed: 0,
            out: PathBuf::from("runs/default"),
            sweep_betas: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }
}

/// Optional batch planning: for every decision, compose an audio batch plan
/// at the chosen OAR and log it as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub enabled: bool,
    /// Original clips per planned batch.
    pub batch_size: usize,
    pub policy: MethodPolicy,
    /// Directory of RIR WAV files; synthetic responses are used when absent.
    pub rir_dir: Option<PathBuf>,
    pub synthetic_rirs: usize,
    /// Directory of noise WAV files; a white-noise clip is used when absent.
    pub noise_dir: Option<PathBuf>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            enabled: false,
            batch_size: 8,
            policy: MethodPolicy::PerUtterance,
            rir_dir: None,
            synthetic_rirs: 4,
            noise_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub episode: EpisodeConfig,
    pub agent: AgentConfig,
    pub surrogate: SurrogateParams,
    pub learner: TaskParams,
    pub plan: PlanSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.run.episodes == 0 {
            return bad("run.episodes must be >= 1".into());
        }
        if self.run.sweep_betas.is_empty() {
            return bad("run.sweep_betas must not be empty".into());
        }
        self.episode.validate().map_err(|e| HarnessError::Config(format!("episode: {e}")))?;
        for &b in &self.run.sweep_betas {
            oar_core::OarState::new(b, self.episode.beta_max, self.episode.beta_delta)
                .map_err(|e| HarnessError::Config(format!("run.sweep_betas: {e}")))?;
        }
        self.agent.validate().map_err(|e| HarnessError::Config(format!("agent: {e}")))?;
        self.surrogate.validate().map_err(|e| HarnessError::Config(format!("surrogate: {e}")))?;
        self.learner.validate().map_err(|e| HarnessError::Config(format!("learner: {e}")))?;
        if self.plan.enabled && self.plan.batch_size == 0 {
            return bad("plan.batch_size must be >= 1".into());
        }
        Ok(())
    }
}
