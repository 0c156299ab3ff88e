//! Epsilon-greedy DQN agent with uniform experience replay and a
//! periodically hard-synced target network.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qnet::{AdamState, QNetwork, QnetCheckpoint, QnetError};
use crate::seed::{derive_seed, Rng as SeededRng};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Qnet(#[from] QnetError),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Network input: the normalized `(validation loss, validation error)` pair.
pub type Observation = [f64; 2];

/// The three discrete OAR adjustments. Serialized as its integer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Null = 0,
    Increase = 1,
    Decrease = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Null, Action::Increase, Action::Decrease];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Action::from_id(v as usize).ok_or_else(|| format!("invalid action id {v}"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
}

/// Bounded FIFO of transitions; inserting at capacity evicts the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn store(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    /// `batch_size` distinct entries drawn uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.entries.len() < batch_size {
            return Err(AgentError::InsufficientData {
                have: self.entries.len(),
                need: batch_size,
            });
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), batch_size)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Agent steps during which experience is collected but no gradient step is taken.
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Gradient steps between hard copies of the online net into the target net.
    pub target_sync_interval: u64,
    /// Gradient steps taken per agent step once warm-up is over.
    pub updates_per_step: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            gamma: 0.99,
            warmup_steps: 50,
            batch_size: 32,
            buffer_capacity: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 200,
            target_sync_interval: 20,
            updates_per_step: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive".into());
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch_size {} exceeds buffer capacity {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must be in [0, 1], got {e}"));
            }
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval must be positive".into());
        }
        if self.updates_per_step == 0 {
            return bad("updates_per_step must be positive".into());
        }
        Ok(())
    }
}

/// Linear interpolation from `epsilon_start` to `epsilon_end` over
/// `epsilon_decay_steps`, constant afterwards.
pub fn epsilon_at(config: &AgentConfig, step: u64) -> f64 {
    if config.epsilon_decay_steps == 0 || step >= config.epsilon_decay_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// Index of the largest Q-value; ties go to the lowest action id.
pub fn greedy_action(q: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    online: QNetwork,
    target: QNetwork,
    optimizer: AdamState,
    buffer: ReplayBuffer,
    config: AgentConfig,
    /// Transitions observed so far; drives warm-up and the epsilon schedule.
    step_count: u64,
    /// Gradient steps taken so far; drives target syncing.
    update_count: u64,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = QNetwork::init(derive_seed(seed, 0x51));
        Ok(Self {
            target: online.clone(),
            optimizer: AdamState::new(online.param_count()),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            online,
            config,
            step_count: 0,
            update_count: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut QNetwork {
        &mut self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.config, self.step_count)
    }

    pub fn q_values(&self, state: Observation) -> Result<[f64; 3]> {
        Ok(self.online.forward(state)?)
    }

    /// Uniform random action with probability `epsilon`, else the greedy one.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: Observation,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Action> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(AgentError::Domain(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let q = self.q_values(state)?;
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(Action::ALL[rng.random_range(0..3)]);
        }
        Ok(greedy_action(&q))
    }

    /// Record a transition and advance the agent step counter.
    pub fn observe(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(AgentError::Domain(format!("non-finite reward {}", t.reward)));
        }
        self.buffer.store(t);
        self.step_count += 1;
        Ok(())
    }

    /// One-step targets `r + γ·max_a′ Q_target(s′, a′)`, or `r` on terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                if t.terminal {
                    Ok(t.reward)
                } else {
                    let q = self.target.forward(t.next_state)?;
                    Ok(t.reward + self.config.gamma * q[0].max(q[1]).max(q[2]))
                }
            })
            .collect()
    }

    pub fn ready_to_train(&self) -> bool {
        self.step_count >= self.config.warmup_steps && self.buffer.len() >= self.config.batch_size
    }

    /// One gradient step on a replay minibatch, or `None` while warming up
    /// or while the buffer is smaller than a batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if !self.ready_to_train() {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        let targets = self.td_targets(&batch)?;
        let states: Vec<Observation> = batch.iter().map(|t| t.state).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action.id()).collect();
        let (loss, grads) = self.online.loss_and_grad(&states, &actions, &targets)?;
        self.online.adam_step(&grads, &mut self.optimizer, self.config.lr)?;
        self.update_count += 1;
        if self.update_count.is_multiple_of(self.config.target_sync_interval) {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            qnet: self.online.to_checkpoint(None),
            target: self.target.to_checkpoint(None),
            opt_state: self.optimizer.clone(),
            buffer: self.buffer.clone(),
            step_count: self.step_count,
            update_count: self.update_count,
            config: self.config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.checkpoint()).expect("checkpoint serializes")
    }

    pub fn restore(ck: &AgentCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let online = QNetwork::from_checkpoint(&ck.qnet)?;
        let target = QNetwork::from_checkpoint(&ck.target)?;
        if ck.opt_state.m.len() != online.param_count() || ck.opt_state.v.len() != online.param_count() {
            return Err(AgentError::Config("optimizer state does not match network".into()));
        }
        if ck.buffer.len() > ck.buffer.capacity() || ck.buffer.capacity() != ck.config.buffer_capacity {
            return Err(AgentError::Config("buffer capacity does not match config".into()));
        }
        Ok(Self {
            online,
            target,
            optimizer: ck.opt_state.clone(),
            buffer: ck.buffer.clone(),
            config: ck.config.clone(),
            step_count: ck.step_count,
            update_count: ck.update_count,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::restore(&serde_json::from_str(json)?)
    }
}

/// Serialized agent: both networks, optimizer moments, replay contents and counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub qnet: QnetCheckpoint,
    pub target: QnetCheckpoint,
    pub opt_state: AdamState,
    pub buffer: ReplayBuffer,
    pub step_count: u64,
    pub update_count: u64,
    pub config: AgentConfig,
}

impl crate::env::OarController for DqnAgent {
    fn choose(&mut self, state: Observation, rng: &mut SeededRng) -> Result<Action> {
        let eps = self.epsilon();
        self.select_action(state, eps, rng)
    }

    fn learn(&mut self, t: Transition, rng: &mut SeededRng) -> Result<Option<f64>> {
        self.observe(t)?;
        let mut last = None;
        for _ in 0..self.config.updates_per_step {
            match self.train_step(rng)? {
                Some(l) => last = Some(l),
                None => break,
            }
        }
        Ok(last)
    }
}
