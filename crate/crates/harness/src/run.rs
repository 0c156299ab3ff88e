//! Multi-episode agent runs and fixed-OAR baseline sweeps.
//!
//! Seeds: episode `e` (0-based) uses `derive_seed(base, e)`; from that the
//! environment, exploration and batch-planning streams are split with tags
//! 0, 1 and 2. Sweep baselines replay the environment seed of the final
//! agent episode so that the two modes are compared on identical noise.

use std::path::{Path, PathBuf};

use oar_core::augment::{load_rir_bank, synthetic_rir, ClipId};
use oar_core::env::{EnvError, EpisodeError};
use oar_core::seed::{derive_seed, rng_from_seed, Rng};
use oar_core::{
    run_episode, AudioClip, AugmentationPipeline, DqnAgent, EnvState, EpisodeLog, LearnerEnv,
    NullController, OarController, SurrogateEnv, TrainingEnvironment,
};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{EnvironmentKind, Mode, PlanSection, RunConfig};
use crate::error::{HarnessError, Result};

pub const ROAR_REPORT: &str = "roar_report.json";
pub const SWEEP_REPORT: &str = "sweep_report.json";
const AGENT_INIT_TAG: u64 = 0xA6E7;

/// 1-based episode numbering in file names.
pub fn schedule_file(episode: usize) -> String {
    format!("schedule_ep{episode}.csv")
}

pub fn checkpoint_file(episode: usize) -> String {
    format!("agent_ep{episode}.json")
}

pub fn plans_file(episode: usize) -> String {
    format!("plans_ep{episode}.jsonl")
}

pub fn baseline_file(beta: f64) -> String {
    format!("baseline_beta_{beta:.1}.csv")
}

pub fn episode_seed(base: u64, episode_index: usize) -> u64 {
    derive_seed(base, episode_index as u64)
}

pub fn env_seed(base: u64, episode_index: usize) -> u64 {
    derive_seed(episode_seed(base, episode_index), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub env_seed: u64,
    pub initial_wer: f64,
    pub final_wer: f64,
    pub final_loss: f64,
    pub total_reward: f64,
    pub schedule: String,
    pub checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoarReport {
    pub environment: EnvironmentKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub beta: f64,
    pub initial_wer: f64,
    pub final_wer: f64,
    pub final_loss: f64,
    pub total_reward: f64,
    pub schedule: String,
    /// Augmented samples the learner trained on; absent for the surrogate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_entries: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub environment: EnvironmentKind,
    pub seed: u64,
    pub env_seed: u64,
    pub baselines: Vec<BaselineSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunReport {
    Roar(RoarReport),
    Sweep(SweepReport),
}

/// The configured environment behind one concrete type.
#[allow(clippy::large_enum_variant)]
enum Environment {
    Surrogate(SurrogateEnv),
    Learner(LearnerEnv),
}

impl Environment {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let beta_max = cfg.episode.beta_max;
        Ok(match cfg.run.environment {
            EnvironmentKind::Surrogate => Environment::Surrogate(SurrogateEnv::new(
                cfg.surrogate.clone(),
                cfg.episode.horizon,
                beta_max,
            )?),
            EnvironmentKind::Learner => {
                let mut env = LearnerEnv::new(cfg.learner.clone(), beta_max)?;
                env.record_batches = true;
                Environment::Learner(env)
            }
        })
    }

    fn augmented_entries(&self) -> Option<u64> {
        match self {
            Environment::Surrogate(_) => None,
            Environment::Learner(env) => Some(env.batch_log.iter().map(|b| b.augmented as u64).sum()),
        }
    }
}

impl TrainingEnvironment for Environment {
    fn reset(&mut self, seed: u64) -> oar_core::env::Result<EnvState> {
        match self {
            Environment::Surrogate(e) => e.reset(seed),
            Environment::Learner(e) => e.reset(seed),
        }
    }

    fn train_chunk(&mut self, beta: f64, iterations: usize) -> oar_core::env::Result<EnvState> {
        match self {
            Environment::Surrogate(e) => e.train_chunk(beta, iterations),
            Environment::Learner(e) => e.train_chunk(beta, iterations),
        }
    }
}

/// Wraps an environment and logs one audio batch plan per training chunk.
struct Planner<'a> {
    inner: &'a mut dyn TrainingEnvironment,
    pipeline: AugmentationPipeline,
    rng: Rng,
    batch_size: usize,
    step: usize,
    lines: Vec<String>,
}

#[derive(Serialize)]
struct PlanLine<'a> {
    step: usize,
    beta: f64,
    plan: &'a oar_core::BatchPlan,
}

impl TrainingEnvironment for Planner<'_> {
    fn reset(&mut self, seed: u64) -> oar_core::env::Result<EnvState> {
        self.step = 0;
        self.lines.clear();
        self.inner.reset(seed)
    }

    fn train_chunk(&mut self, beta: f64, iterations: usize) -> oar_core::env::Result<EnvState> {
        self.step += 1;
        let first = ((self.step - 1) * self.batch_size) as u64;
        let originals: Vec<ClipId> = (first..first + self.batch_size as u64).map(ClipId).collect();
        let plan = self
            .pipeline
            .compose_batch(&originals, beta, &mut self.rng)
            .map_err(|e| EnvError::Domain(e.to_string()))?;
        let line = PlanLine {
            step: self.step,
            beta,
            plan: &plan,
        };
        self.lines.push(serde_json::to_string(&line).expect("plan serializes"));
        self.inner.train_chunk(beta, iterations)
    }
}

fn white_noise(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn build_pipeline(plan: &PlanSection, seed: u64) -> Result<AugmentationPipeline> {
    const RATE: u32 = 16_000;
    let mut rng = rng_from_seed(derive_seed(seed, 0xB4C));
    let rirs = match &plan.rir_dir {
        Some(dir) => load_rir_bank(dir)?,
        None => (0..plan.synthetic_rirs.max(1))
            .map(|i| synthetic_rir(4000, 0.2 + 0.1 * i as f64, RATE, &mut rng))
            .collect(),
    };
    let noise = match &plan.noise_dir {
        Some(dir) => load_rir_bank(dir)?,
        None => vec![AudioClip::new(white_noise(RATE as usize, &mut rng), RATE)],
    };
    Ok(AugmentationPipeline::with_methods(
        noise,
        rirs,
        oar_core::Method::ALL.to_vec(),
        plan.policy,
    )?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).map_err(HarnessError::io(path))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write(path, &(text + "\n"))
}

/// Run one episode; on failure the partial schedule is still written.
fn episode(
    controller: &mut dyn OarController,
    env: &mut dyn TrainingEnvironment,
    cfg: &oar_core::EpisodeConfig,
    seed: u64,
    rng: &mut Rng,
    csv: PathBuf,
) -> Result<EpisodeLog> {
    match run_episode(controller, env, cfg, seed, rng) {
        Ok(log) => {
            write(csv, &log.to_csv())?;
            Ok(log)
        }
        Err(err) => {
            write(csv, &err.partial.to_csv())?;
            Err(HarnessError::Episode(Box::new(err)))
        }
    }
}

fn run_roar(cfg: &RunConfig, out: &Path) -> Result<RoarReport> {
    let base = cfg.run.seed;
    let mut env = Environment::new(cfg)?;
    let mut agent = DqnAgent::new(cfg.agent.clone(), derive_seed(base, AGENT_INIT_TAG))?;
    let mut episodes = Vec::with_capacity(cfg.run.episodes);

    for e in 1..=cfg.run.episodes {
        if e > 1 {
            let path = out.join(checkpoint_file(e - 1));
            let json = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
            agent = DqnAgent::from_json(&json)?;
        }
        let ep_seed = episode_seed(base, e - 1);
        let seed = env_seed(base, e - 1);
        let mut rng = rng_from_seed(derive_seed(ep_seed, 1));
        let csv = out.join(schedule_file(e));

        let (log, plans) = if cfg.plan.enabled {
            let mut planner = Planner {
                inner: &mut env,
                pipeline: build_pipeline(&cfg.plan, derive_seed(ep_seed, 2))?,
                rng: rng_from_seed(derive_seed(ep_seed, 2)),
                batch_size: cfg.plan.batch_size,
                step: 0,
                lines: Vec::new(),
            };
            let result = episode(&mut agent, &mut planner, &cfg.episode, seed, &mut rng, csv);
            let name = plans_file(e);
            let mut text = planner.lines.join("\n");
            text.push('\n');
            write(out.join(&name), &text)?;
            (result?, Some(name))
        } else {
            (episode(&mut agent, &mut env, &cfg.episode, seed, &mut rng, csv)?, None)
        };

        write(out.join(checkpoint_file(e)), &agent.to_json())?;
        let last = log.final_state();
        episodes.push(EpisodeSummary {
            episode: e,
            env_seed: seed,
            initial_wer: log.initial_state.val_wer,
            final_wer: last.val_wer,
            final_loss: last.val_loss,
            total_reward: log.total_reward(),
            schedule: schedule_file(e),
            checkpoint: checkpoint_file(e),
            plans,
        });
    }

    let report = RoarReport {
        environment: cfg.run.environment,
        seed: base,
        episodes,
    };
    write_json(out.join(ROAR_REPORT), &report)?;
    Ok(report)
}

fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepReport> {
    let seed = env_seed(cfg.run.seed, cfg.run.episodes - 1);
    let runs: Vec<std::result::Result<(EpisodeLog, Option<u64>), EpisodeError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .run
            .sweep_betas
            .iter()
            .map(|&beta| {
                s.spawn(move || {
                    let mut env = Environment::new(cfg).map_err(|e| EpisodeError {
                        partial: EpisodeLog {
                            initial_state: EnvState { val_loss: 0.0, val_wer: 0.0 },
                            initial_beta: beta,
                            iterations_per_step: cfg.episode.iterations_per_step,
                            outcomes: Vec::new(),
                        },
                        source: EnvError::Domain(e.to_string()),
                    })?;
                    let ep = oar_core::EpisodeConfig {
                        initial_beta: beta,
                        ..cfg.episode.clone()
                    };
                    // the null controller never draws from its stream
                    let log = run_episode(&mut NullController, &mut env, &ep, seed, &mut rng_from_seed(0))?;
                    Ok((log, env.augmented_entries()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread panicked")).collect()
    });

    let mut baselines = Vec::with_capacity(runs.len());
    let mut failure = None;
    for (&beta, result) in cfg.run.sweep_betas.iter().zip(runs) {
        let name = baseline_file(beta);
        match result {
            Ok((log, augmented_entries)) => {
                write(out.join(&name), &log.to_csv())?;
                let last = log.final_state();
                baselines.push(BaselineSummary {
                    beta,
                    initial_wer: log.initial_state.val_wer,
                    final_wer: last.val_wer,
                    final_loss: last.val_loss,
                    total_reward: log.total_reward(),
                    schedule: name,
                    augmented_entries,
                });
            }
            Err(err) => {
                write(out.join(&name), &err.partial.to_csv())?;
                failure.get_or_insert(HarnessError::Episode(Box::new(err)));
            }
        }
    }
    if let Some(err) = failure {
        return Err(err);
    }
    let report = SweepReport {
        environment: cfg.run.environment,
        seed: cfg.run.seed,
        env_seed: seed,
        baselines,
    };
    write_json(out.join(SWEEP_REPORT), &report)?;
    Ok(report)
}

/// Execute `cfg` and write every artifact under `cfg.run.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.run.out.clone();
    create_dir(&out)?;
    match cfg.run.mode {
        Mode::Roar => run_roar(cfg, &out).map(RunReport::Roar),
        Mode::Sweep => run_sweep(cfg, &out).map(RunReport::Sweep),
    }
}
