//! Synthetic training dynamics with a known, time-varying optimal OAR.
//!
//! Per chunk the error rate falls by
//! `g(t, β) = g0 · 1/(1 + t/T) · exp(−(β − β*(t))² / (2σ²))`, where `β*(t)`
//! is low in the first third of the episode, high in the middle third and low
//! again in the last. Gains never depend on earlier choices, so a dynamic
//! program over `(t, β)` gives the exact best reachable schedule.
//!
//! All numeric defaults are calibration values, overridable from config.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agent::Action;
use crate::env::{EnvError, EnvState, OarState, Result, TrainingEnvironment};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateParams {
    /// Error rate at reset, percent.
    pub wer0: f64,
    /// Peak error-rate drop per chunk at `t = 0`, percentage points.
    pub base_gain: f64,
    /// `β*` for the first, middle and last third of the episode.
    pub beta_profile: [f64; 3],
    /// Width `σ` of the Gaussian response to `β − β*`.
    pub sensitivity: f64,
    pub noise_std: f64,
    /// Lowest reachable error rate.
    pub floor: f64,
    /// Validation loss is `wer · loss_coupling · 20` plus noise.
    pub loss_coupling: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            wer0: 40.0,
            base_gain: 2.0,
            beta_profile: [0.4, 2.0, 0.4],
            sensitivity: 1.0,
            noise_std: 0.05,
            floor: 5.0,
            loss_coupling: 0.05,
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EnvError::Domain(m));
        if !(self.floor >= 0.0 && self.wer0 > self.floor && self.wer0 + 10.0 <= 100.0) {
            return bad(format!("need 0 <= floor < wer0 <= 90, got floor {} wer0 {}", self.floor, self.wer0));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return bad(format!("sensitivity must be positive, got {}", self.sensitivity));
        }
        if !(self.base_gain.is_finite() && self.base_gain >= 0.0) {
            return bad(format!("base_gain must be >= 0, got {}", self.base_gain));
        }
        if !(self.loss_coupling.is_finite() && self.loss_coupling >= 0.0) {
            return bad(format!("loss_coupling must be >= 0, got {}", self.loss_coupling));
        }
        if self.beta_profile.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return bad(format!("beta_profile must be non-negative, got {:?}", self.beta_profile));
        }
        Ok(())
    }

    /// `β*(t)` for a `horizon`-step episode, `t` counted from 0.
    pub fn optimal_beta(&self, t: usize, horizon: usize) -> f64 {
        if 3 * t < horizon {
            self.beta_profile[0]
        } else if 3 * t < 2 * horizon {
            self.beta_profile[1]
        } else {
            self.beta_profile[2]
        }
    }

    pub fn decay(&self, t: usize, horizon: usize) -> f64 {
        1.0 / (1.0 + t as f64 / horizon as f64)
    }

    /// Noise-free error-rate drop of chunk `t` trained at `beta`.
    pub fn gain(&self, t: usize, horizon: usize, beta: f64) -> f64 {
        let d = beta - self.optimal_beta(t, horizon);
        self.base_gain * self.decay(t, horizon) * (-(d * d) / (2.0 * self.sensitivity * self.sensitivity)).exp()
    }

    /// Final error rate of a schedule under noise-free dynamics.
    ///
    /// Because every gain is non-negative, iterating `max(floor, wer − g)`
    /// equals `max(floor, wer0 − Σg)`.
    pub fn noise_free_final_wer(&self, horizon: usize, schedule: &[f64]) -> f64 {
        let total: f64 = schedule
            .iter()
            .enumerate()
            .map(|(t, &b)| self.gain(t, horizon, b))
            .sum();
        (self.wer0 - total).max(self.floor)
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEnv {
    params: SurrogateParams,
    horizon: usize,
    beta_max: f64,
    t: usize,
    wer: f64,
    loss: f64,
    rng: Rng,
}

impl SurrogateEnv {
    pub fn new(params: SurrogateParams, horizon: usize, beta_max: f64) -> Result<Self> {
        params.validate()?;
        if horizon == 0 {
            return Err(EnvError::Domain("horizon must be >= 1".into()));
        }
        let wer = params.wer0;
        let loss = wer * params.loss_coupling * 20.0;
        Ok(Self {
            params,
            horizon,
            beta_max,
            t: 0,
            wer,
            loss,
            rng: rng_from_seed(0),
        })
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    fn noise(&mut self) -> f64 {
        if self.params.noise_std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, self.params.noise_std)
                .expect("validated std")
                .sample(&mut self.rng)
        }
    }

    fn state(&self) -> EnvState {
        EnvState {
            val_loss: self.loss,
            val_wer: self.wer,
        }
    }
}

impl TrainingEnvironment for SurrogateEnv {
    fn reset(&mut self, seed: u64) -> Result<EnvState> {
        self.t = 0;
        self.wer = self.params.wer0;
        self.loss = self.wer * self.params.loss_coupling * 20.0;
        self.rng = rng_from_seed(seed);
        Ok(self.state())
    }

    /// One chunk of surrogate training. `_iterations` does not enter the
    /// dynamics: a chunk is the unit of progress.
    fn train_chunk(&mut self, beta: f64, _iterations: usize) -> Result<EnvState> {
        if !(0.0..=self.beta_max).contains(&beta) {
            return Err(EnvError::Domain(format!("beta {beta} outside [0, {}]", self.beta_max)));
        }
        let g = self.params.gain(self.t, self.horizon, beta);
        let xi = self.noise();
        self.wer = (self.wer - g + xi).clamp(self.params.floor, self.params.wer0 + 10.0);
        let xi_loss = self.noise();
        self.loss = (self.wer * self.params.loss_coupling * 20.0 + xi_loss).max(0.0);
        self.t += 1;
        Ok(self.state())
    }
}

/// Best reachable schedule under noise-free dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSchedule {
    pub betas: Vec<f64>,
    pub actions: Vec<Action>,
    pub total_gain: f64,
    pub final_wer: f64,
}

/// Dynamic program over `(t, β)` with the agent's own constraints: start at
/// `start`, move at most one grid step per decision, clamp at the bounds.
/// Ties go to the lowest action id.
pub fn oracle_best_schedule(params: &SurrogateParams, horizon: usize, start: OarState) -> OracleSchedule {
    let levels = (start.beta_max() / start.delta()).round() as usize + 1;
    let at_level = |l: usize| {
        OarState::new(0.0, start.beta_max(), start.delta())
            .map(|mut o| {
                for _ in 0..l {
                    o = o.apply_action(Action::Increase);
                }
                o
            })
            .expect("grid bounds come from a valid state")
    };
    let grid: Vec<OarState> = (0..levels).map(at_level).collect();

    // best[t][l]: max gain collectable from decision t onwards when β sits at level l
    let mut best = vec![vec![0.0; levels]; horizon + 1];
    let mut choice = vec![vec![Action::Null; levels]; horizon];
    for t in (0..horizon).rev() {
        for l in 0..levels {
            let mut top = f64::NEG_INFINITY;
            for a in Action::ALL {
                let next = grid[l].apply_action(a);
                let v = params.gain(t, horizon, next.beta()) + best[t + 1][next.level() as usize];
                if v > top {
                    top = v;
                    choice[t][l] = a;
                }
            }
            best[t][l] = top;
        }
    }

    let mut state = start;
    let mut betas = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    for row in &choice {
        let a = row[state.level() as usize];
        state = state.apply_action(a);
        actions.push(a);
        betas.push(state.beta());
    }
    let total_gain = best[0][start.level() as usize];
    OracleSchedule {
        final_wer: (params.wer0 - total_gain).max(params.floor),
        betas,
        actions,
        total_gain,
    }
}
