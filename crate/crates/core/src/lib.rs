//! Reinforcement-learning control of the original-to-augmented data ratio (OAR).
//!
//! A deep Q-network observes validation metrics of a training process after
//! every chunk of `K` iterations and nudges the augmentation multiplier `β` up,
//! down, or leaves it alone. The reward is the drop in validation error.
//!
//! Module map:
//! - [`wav_io`]: 16-bit mono PCM WAV reading and writing.
//! - [`augment`]: noise, RIR, speed and pitch augmentation plus batch planning by `β`.
//! - [`qnet`]: from-scratch MLP, backpropagation and Adam; the 2-64-64-3 Q-network.
//! - [`agent`]: epsilon-greedy DQN with replay buffer and target network.
//! - [`env`]: the environment contract, OAR dynamics, rewards and the episode loop.
//! - [`surrogate_env`]: synthetic training dynamics with a known optimal schedule.
//! - [`learner_env`]: a real MLP classifier trained under input-noise augmentation.

pub mod agent;
pub mod augment;
pub mod env;
pub mod learner_env;
pub mod qnet;
pub mod seed;
pub mod surrogate_env;
pub mod wav_io;

pub use agent::{Action, AgentConfig, DqnAgent, ReplayBuffer, Transition};
pub use augment::{AugmentationPipeline, AugmentationSpec, BatchPlan, ClipId, Method};
pub use env::{
    run_episode, EnvState, EpisodeConfig, EpisodeLog, NullController, OarController, OarState,
    ScriptedController, StepOutcome, TrainingEnvironment,
};
pub use learner_env::{LearnerEnv, TaskParams};
pub use qnet::{GradientSet, QNetwork};
pub use surrogate_env::{oracle_best_schedule, OracleSchedule, SurrogateEnv, SurrogateParams};
pub use wav_io::AudioClip;
