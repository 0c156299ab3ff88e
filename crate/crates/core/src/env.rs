//! The environment contract and the episode loop.
//!
//! Each agent decision adjusts `β` by one grid step (or not at all), the
//! environment trains for `K` iterations at that `β`, and the reward is the
//! drop in validation error since the previous decision.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Action, AgentError, Observation, Transition};
use crate::seed::Rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training environment failed: {0}")]
    Training(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("schedule csv: {0}")]
    Csv(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Validation metrics observed after a training chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub val_loss: f64,
    /// Validation error rate in percent.
    pub val_wer: f64,
}

impl EnvState {
    pub fn new(val_loss: f64, val_wer: f64) -> Result<Self> {
        let s = Self { val_loss, val_wer };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.val_loss.is_finite() || self.val_loss < 0.0 {
            return Err(EnvError::Domain(format!("val_loss {} must be finite and >= 0", self.val_loss)));
        }
        if !(0.0..=100.0).contains(&self.val_wer) {
            return Err(EnvError::Domain(format!("val_wer {} outside [0, 100]", self.val_wer)));
        }
        Ok(())
    }
}

/// `β` kept on an exact grid: `beta = level · delta`, `level ∈ [0, max_level]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OarState {
    level: u32,
    max_level: u32,
    delta: f64,
}

impl OarState {
    pub const DEFAULT_DELTA: f64 = 0.2;

    pub fn new(beta: f64, beta_max: f64, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(EnvError::Domain(format!("delta must be positive, got {delta}")));
        }
        let on_grid = |v: f64, what: &str| -> Result<u32> {
            let k = (v / delta).round();
            if !v.is_finite() || v < 0.0 || (k * delta - v).abs() > 1e-9 || k > u32::MAX as f64 {
                return Err(EnvError::Domain(format!("{what} {v} is not a non-negative multiple of {delta}")));
            }
            Ok(k as u32)
        };
        let max_level = on_grid(beta_max, "beta_max")?;
        let level = on_grid(beta, "beta")?;
        if level > max_level {
            return Err(EnvError::Domain(format!("beta {beta} exceeds beta_max {beta_max}")));
        }
        Ok(Self {
            level,
            max_level,
            delta,
        })
    }

    /// Divides by the integer steps-per-unit when there is one, so level 6
    /// reads back as 1.2 rather than 6 × 0.2 = 1.2000000000000002.
    fn to_beta(self, level: u32) -> f64 {
        let delta = self.delta;
        let per_unit = (1.0 / delta).round();
        if (per_unit * delta - 1.0).abs() < 1e-12 {
            level as f64 / per_unit
        } else {
            level as f64 * delta
        }
    }

    pub fn beta(&self) -> f64 {
        self.to_beta(self.level)
    }

    pub fn beta_max(&self) -> f64 {
        self.to_beta(self.max_level)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Null keeps `β`; increase/decrease move one grid step, clamped to `[0, beta_max]`.
    pub fn apply_action(self, action: Action) -> Self {
        let level = match action {
            Action::Null => self.level,
            Action::Increase => (self.level + 1).min(self.max_level),
            Action::Decrease => self.level.saturating_sub(1),
        };
        Self { level, ..self }
    }

    /// Like [`apply_action`](Self::apply_action) for a raw action id.
    pub fn apply_action_id(self, id: usize) -> Result<Self> {
        let action = Action::from_id(id).ok_or_else(|| EnvError::Domain(format!("invalid action id {id}")))?;
        Ok(self.apply_action(action))
    }
}

pub fn reward_from_wer(prev_wer: f64, new_wer: f64) -> f64 {
    prev_wer - new_wer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Agent decisions per episode (`T`).
    pub horizon: usize,
    /// Trainer iterations between decisions (`K`).
    pub iterations_per_step: usize,
    /// Divisor for validation loss; `None` uses the loss observed at reset.
    pub loss_scale: Option<f64>,
    pub wer_scale: f64,
    pub initial_beta: f64,
    pub beta_max: f64,
    pub beta_delta: f64,
    /// Optional symmetric clip on rewards. Off by default.
    pub reward_clip: Option<f64>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            iterations_per_step: 50,
            loss_scale: None,
            wer_scale: 100.0,
            initial_beta: 0.0,
            beta_max: 4.0,
            beta_delta: OarState::DEFAULT_DELTA,
            reward_clip: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations_per_step == 0 {
            return Err(EnvError::Domain("horizon and iterations_per_step must be >= 1".into()));
        }
        if let Some(s) = self.loss_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(EnvError::Domain(format!("loss_scale must be positive, got {s}")));
            }
        }
        if !(self.wer_scale.is_finite() && self.wer_scale > 0.0) {
            return Err(EnvError::Domain(format!("wer_scale must be positive, got {}", self.wer_scale)));
        }
        if let Some(c) = self.reward_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(EnvError::Domain(format!("reward_clip must be positive, got {c}")));
            }
        }
        self.initial_oar().map(|_| ())
    }

    pub fn initial_oar(&self) -> Result<OarState> {
        OarState::new(self.initial_beta, self.beta_max, self.beta_delta)
    }
}

/// Scale to `[val_loss / loss_scale, val_wer / wer_scale]`, each clamped to `[0, 10]`.
pub fn normalize_state(raw: &EnvState, loss_scale: f64, wer_scale: f64) -> Observation {
    [
        (raw.val_loss / loss_scale).clamp(0.0, 10.0),
        (raw.val_wer / wer_scale).clamp(0.0, 10.0),
    ]
}

/// A training process whose augmentation multiplier is under control.
/// Both calls must be deterministic given the seed passed to `reset`.
pub trait TrainingEnvironment {
    fn reset(&mut self, seed: u64) -> Result<EnvState>;
    fn train_chunk(&mut self, beta: f64, iterations: usize) -> Result<EnvState>;
}

/// Something that picks OAR actions and learns from their outcomes.
pub trait OarController {
    fn choose(&mut self, state: Observation, rng: &mut Rng) -> std::result::Result<Action, AgentError>;

    /// Consume one transition; return a training loss if an update happened.
    fn learn(&mut self, t: Transition, rng: &mut Rng) -> std::result::Result<Option<f64>, AgentError>;
}

/// Always takes the null action: a fixed-OAR baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullController;

impl OarController for NullController {
    fn choose(&mut self, _: Observation, _: &mut Rng) -> std::result::Result<Action, AgentError> {
        Ok(Action::Null)
    }

    fn learn(&mut self, _: Transition, _: &mut Rng) -> std::result::Result<Option<f64>, AgentError> {
        Ok(None)
    }
}

/// Replays a fixed action list, then repeats the null action.
#[derive(Debug, Clone, Default)]
pub struct ScriptedController {
    actions: Vec<Action>,
    next: usize,
    pub seen: Vec<Transition>,
}

impl ScriptedController {
    pub fn new(actions: Vec<Action>) -> Self {
        Self {
            actions,
            next: 0,
            seen: Vec::new(),
        }
    }
}

impl OarController for ScriptedController {
    fn choose(&mut self, _: Observation, _: &mut Rng) -> std::result::Result<Action, AgentError> {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::Null);
        self.next += 1;
        Ok(a)
    }

    fn learn(&mut self, t: Transition, _: &mut Rng) -> std::result::Result<Option<f64>, AgentError> {
        self.seen.push(t);
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// 1-based decision index.
    pub step: usize,
    pub action: Action,
    pub beta_used: f64,
    pub state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub initial_state: EnvState,
    pub initial_beta: f64,
    pub iterations_per_step: usize,
    pub outcomes: Vec<StepOutcome>,
}

impl EpisodeLog {
    /// The `β_t` series, one entry per decision.
    pub fn schedule(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.beta_used).collect()
    }

    pub fn final_state(&self) -> EnvState {
        self.outcomes.last().map_or(self.initial_state, |o| o.state)
    }

    pub fn total_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,beta,val_loss,val_wer,reward,action\n");
        for o in &self.outcomes {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                o.step, o.beta_used, o.state.val_loss, o.state.val_wer, o.reward, o.action
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// An episode that stopped early, with everything logged before the failure.
#[derive(Debug, Error)]
#[error("episode aborted after {} steps: {source}", .partial.outcomes.len())]
pub struct EpisodeError {
    pub partial: EpisodeLog,
    #[source]
    pub source: EnvError,
}

/// Run one episode of `cfg.horizon` decisions.
///
/// The environment is reset with `env_seed`; `rng` drives exploration and
/// replay sampling. The last step is marked terminal.
pub fn run_episode(
    controller: &mut dyn OarController,
    env: &mut dyn TrainingEnvironment,
    cfg: &EpisodeConfig,
    env_seed: u64,
    rng: &mut Rng,
) -> std::result::Result<EpisodeLog, EpisodeError> {
    let fail = |partial: EpisodeLog, source: EnvError| EpisodeError { partial, source };
    let empty = |initial_state| EpisodeLog {
        initial_state,
        initial_beta: cfg.initial_beta,
        iterations_per_step: cfg.iterations_per_step,
        outcomes: Vec::new(),
    };

    let placeholder = EnvState { val_loss: 0.0, val_wer: 0.0 };
    if let Err(e) = cfg.validate() {
        return Err(fail(empty(placeholder), e));
    }
    let mut state = match env.reset(env_seed).and_then(|s| s.validate().map(|_| s)) {
        Ok(s) => s,
        Err(e) => return Err(fail(empty(placeholder), e)),
    };
    let mut log = empty(state);
    let loss_scale = cfg
        .loss_scale
        .unwrap_or(if state.val_loss > 0.0 { state.val_loss } else { 1.0 });
    let mut oar = cfg.initial_oar().expect("validated above");

    for step in 1..=cfg.horizon {
        let obs = normalize_state(&state, loss_scale, cfg.wer_scale);
        let action = match controller.choose(obs, rng) {
            Ok(a) => a,
            Err(e) => return Err(fail(log, e.into())),
        };
        oar = oar.apply_action(action);
        let beta = oar.beta();
        let next = match env
            .train_chunk(beta, cfg.iterations_per_step)
            .and_then(|s| s.validate().map(|_| s))
        {
            Ok(s) => s,
            Err(e) => return Err(fail(log, e)),
        };
        let mut reward = reward_from_wer(state.val_wer, next.val_wer);
        if let Some(c) = cfg.reward_clip {
            reward = reward.clamp(-c, c);
        }
        let terminal = step == cfg.horizon;
        let transition = Transition {
            state: obs,
            action,
            reward,
            next_state: normalize_state(&next, loss_scale, cfg.wer_scale),
            terminal,
        };
        let train_loss = match controller.learn(transition, rng) {
            Ok(l) => l,
            Err(e) => return Err(fail(log, e.into())),
        };
        log.outcomes.push(StepOutcome {
            step,
            action,
            beta_used: beta,
            state: next,
            reward,
            terminal,
            train_loss,
        });
        state = next;
    }
    Ok(log)
}

/// One parsed row of a schedule CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub step: usize,
    pub beta: f64,
    pub val_loss: f64,
    pub val_wer: f64,
    pub reward: f64,
    pub action: Action,
}

pub const SCHEDULE_HEADER: &str = "step,beta,val_loss,val_wer,reward,action";

pub fn parse_schedule_csv(text: &str) -> Result<Vec<ScheduleRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SCHEDULE_HEADER => {}
        other => return Err(EnvError::Csv(format!("bad header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(EnvError::Csv(format!("line {lineno}: expected 6 columns, got {}", cols.len())));
        }
        let num = |j: usize| -> Result<f64> {
            cols[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| EnvError::Csv(format!("line {lineno}: bad number '{}'", cols[j])))
        };
        let step = cols[0]
            .parse::<usize>()
            .map_err(|_| EnvError::Csv(format!("line {lineno}: bad step '{}'", cols[0])))?;
        let action = cols[5]
            .parse::<usize>()
            .ok()
            .and_then(Action::from_id)
            .ok_or_else(|| EnvError::Csv(format!("line {lineno}: bad action '{}'", cols[5])))?;
        if rows.last().is_some_and(|r: &ScheduleRow| r.step >= step) {
            return Err(EnvError::Csv(format!("line {lineno}: step indices must increase")));
        }
        rows.push(ScheduleRow {
            step,
            beta: num(1)?,
            val_loss: num(2)?,
            val_wer: num(3)?,
            reward: num(4)?,
            action,
        });
    }
    Ok(rows)
}

pub fn read_schedule_csv(path: impl AsRef<Path>) -> Result<Vec<ScheduleRow>> {
    parse_schedule_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    /// Deterministic toy environment: error falls by `beta + 0.5` per chunk.
    struct Linear {
        wer: f64,
        fail_at: Option<usize>,
        calls: usize,
    }

    impl TrainingEnvironment for Linear {
        fn reset(&mut self, seed: u64) -> Result<EnvState> {
            self.wer = 50.0 + (seed % 7) as f64;
            self.calls = 0;
            EnvState::new(2.0, self.wer)
        }

        fn train_chunk(&mut self, beta: f64, _k: usize) -> Result<EnvState> {
            self.calls += 1;
            if Some(self.calls) == self.fail_at {
                return Err(EnvError::Training("evaluation crashed".into()));
            }
            self.wer = (self.wer - beta - 0.5).max(0.0);
            EnvState::new(self.wer / 25.0, self.wer)
        }
    }

    fn linear() -> Linear {
        Linear { wer: 0.0, fail_at: None, calls: 0 }
    }

    #[test]
    fn actions_move_beta_on_the_grid() {
        let o = OarState::new(1.0, 4.0, 0.2).unwrap();
        assert_eq!(o.apply_action(Action::Increase).beta(), 1.2);
        assert_eq!(o.apply_action(Action::Decrease).beta(), 0.8);
        assert_eq!(o.apply_action(Action::Null).beta(), 1.0);
        let zero = OarState::new(0.0, 4.0, 0.2).unwrap();
        assert_eq!(zero.apply_action(Action::Decrease).beta(), 0.0);
        let top = OarState::new(4.0, 4.0, 0.2).unwrap();
        assert_eq!(top.apply_action(Action::Increase).beta(), 4.0);
        assert!(matches!(o.apply_action_id(3), Err(EnvError::Domain(_))));
        assert!(OarState::new(0.3, 4.0, 0.2).is_err());
        assert!(OarState::new(4.2, 4.0, 0.2).is_err());
    }

    #[test]
    fn reward_sign_convention() {
        assert_eq!(reward_from_wer(40.0, 38.0), 2.0);
        assert_eq!(reward_from_wer(12.5, 12.5), 0.0);
        assert_eq!(reward_from_wer(20.0, 21.5), -1.5);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_state(&EnvState::new(0.0, 0.0).unwrap(), 3.0, 100.0), [0.0, 0.0]);
        assert_eq!(normalize_state(&EnvState::new(3.0, 100.0).unwrap(), 3.0, 100.0), [1.0, 1.0]);
        assert_eq!(normalize_state(&EnvState::new(1e9, 50.0).unwrap(), 3.0, 100.0), [10.0, 0.5]);
    }

    #[test]
    fn env_state_invariants() {
        assert!(EnvState::new(-1.0, 10.0).is_err());
        assert!(EnvState::new(1.0, 100.5).is_err());
        assert!(EnvState::new(f64::NAN, 10.0).is_err());
    }

    #[test]
    fn single_step_episode_is_terminal() {
        let cfg = EpisodeConfig { horizon: 1, ..Default::default() };
        let mut ctl = ScriptedController::new(vec![Action::Increase]);
        let log = run_episode(&mut ctl, &mut linear(), &cfg, 0, &mut rng_from_seed(0)).unwrap();
        assert_eq!(ctl.seen.len(), 1);
        assert!(ctl.seen[0].terminal);
        assert_eq!(log.outcomes.len(), 1);
        assert!(log.outcomes[0].terminal);
        assert_eq!(log.schedule(), vec![0.2]);
    }

    #[test]
    fn null_controller_keeps_initial_beta() {
        let cfg = EpisodeConfig { initial_beta: 2.0, ..Default::default() };
        let log = run_episode(&mut NullController, &mut linear(), &cfg, 3, &mut rng_from_seed(0)).unwrap();
        assert_eq!(log.schedule(), vec![2.0; 12]);
        assert!(log.outcomes.iter().all(|o| o.action == Action::Null));
        assert_eq!(log.outcomes.iter().filter(|o| o.terminal).count(), 1);
    }

    #[test]
    fn rewards_telescope() {
        let cfg = EpisodeConfig::default();
        let script = (0..12).map(|i| Action::ALL[(i * 7 + 1) % 3]).collect();
        let mut ctl = ScriptedController::new(script);
        let log = run_episode(&mut ctl, &mut linear(), &cfg, 5, &mut rng_from_seed(0)).unwrap();
        let identity = log.initial_state.val_wer - log.final_state().val_wer;
        assert!((log.total_reward() - identity).abs() < 1e-9);
    }

    #[test]
    fn transitions_carry_normalized_states() {
        let cfg = EpisodeConfig { horizon: 3, ..Default::default() };
        let mut ctl = ScriptedController::new(vec![]);
        run_episode(&mut ctl, &mut linear(), &cfg, 0, &mut rng_from_seed(0)).unwrap();
        // loss_scale defaults to the reset loss of 2.0
        assert_eq!(ctl.seen[0].state, [1.0, 0.5]);
        assert_eq!(ctl.seen[0].next_state, ctl.seen[1].state);
    }

    #[test]
    fn failure_preserves_partial_log() {
        let mut env = Linear { fail_at: Some(4), ..linear() };
        let err = run_episode(
            &mut NullController,
            &mut env,
            &EpisodeConfig::default(),
            0,
            &mut rng_from_seed(0),
        )
        .unwrap_err();
        assert_eq!(err.partial.outcomes.len(), 3);
        assert!(matches!(err.source, EnvError::Training(_)));
    }

    #[test]
    fn reward_clip_applies() {
        let cfg = EpisodeConfig {
            horizon: 8,
            initial_beta: 4.0,
            reward_clip: Some(1.0),
            ..Default::default()
        };
        let log = run_episode(&mut NullController, &mut linear(), &cfg, 0, &mut rng_from_seed(0)).unwrap();
        assert!(log.outcomes.iter().all(|o| o.reward == 1.0));
    }

    #[test]
    fn csv_format_and_parse() {
        let cfg = EpisodeConfig { horizon: 2, ..Default::default() };
        let mut ctl = ScriptedController::new(vec![Action::Increase, Action::Decrease]);
        let log = run_episode(&mut ctl, &mut linear(), &cfg, 0, &mut rng_from_seed(0)).unwrap();
        let csv = log.to_csv();
        assert_eq!(
            csv,
            "step,beta,val_loss,val_wer,reward,action\n\
             1,0.200000,1.972000,49.300000,0.700000,1\n\
             2,0.000000,1.952000,48.800000,0.500000,2\n"
        );
        let rows = parse_schedule_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].action, Action::Decrease);
        assert!(parse_schedule_csv("step,beta\n1,2\n").is_err());
        assert!(parse_schedule_csv(&format!("{SCHEDULE_HEADER}\n1,0.2,1,1,1,7\n")).is_err());
        assert!(parse_schedule_csv(&format!("{SCHEDULE_HEADER}\n2,0,1,1,1,0\n1,0,1,1,1,0\n")).is_err());
    }

    proptest! {
        #[test]
        fn beta_stays_on_grid_and_in_range(ids in prop::collection::vec(0usize..3, 0..200)) {
            let mut o = OarState::new(0.0, 4.0, 0.2).unwrap();
            for id in ids {
                o = o.apply_action_id(id).unwrap();
                let b = o.beta();
                prop_assert!((0.0..=4.0).contains(&b));
                prop_assert!((b / 0.2 - (b / 0.2).round()).abs() < 1e-9);
            }
        }
    }
}
