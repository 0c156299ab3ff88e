//! A small real training loop under OAR control.
//!
//! A `d → hidden → C` ReLU classifier is trained with minibatch SGD on
//! Gaussian-cluster data. The validation split carries extra additive noise
//! of strength `η`, so training on noise-perturbed copies (the augmentation)
//! can close part of the train/validation gap. Validation error in percent
//! plays the role of WER.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{plan_copies, ClipId};
use crate::env::{EnvError, EnvState, Result, TrainingEnvironment};
use crate::qnet::Mlp;
use crate::seed::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub n_train: usize,
    pub n_val: usize,
    pub dim: usize,
    pub classes: usize,
    /// Std of the extra noise on validation inputs.
    pub shift: f64,
    /// Std of the cluster centres around the origin.
    pub center_scale: f64,
    /// Std of samples around their cluster centre.
    pub cluster_std: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Augmentation noise std is drawn from `U[aug_noise_min, aug_noise_max]` per copy.
    pub aug_noise_min: f64,
    pub aug_noise_max: f64,
    /// Keep one dataset across resets; `None` derives it from the reset seed.
    pub task_seed: Option<u64>,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 500,
            dim: 16,
            classes: 4,
            shift: 0.5,
            center_scale: 0.35,
            cluster_std: 0.2,
            hidden: 32,
            batch_size: 32,
            lr: 0.01,
            aug_noise_min: 0.2,
            aug_noise_max: 0.8,
            task_seed: None,
        }
    }
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::Domain(m.into()));
        if self.n_train == 0 || self.n_val == 0 || self.dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("sizes must be >= 1");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        let nonneg = [self.shift, self.center_scale, self.cluster_std, self.aug_noise_min];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("noise scales must be finite and >= 0");
        }
        if !(self.aug_noise_max.is_finite() && self.aug_noise_max >= self.aug_noise_min) {
            return bad("aug_noise_max must be >= aug_noise_min");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

/// Labelled samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub centers: Vec<Vec<f64>>,
    pub train: Split,
    pub val: Split,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticTask {
    /// Labels cycle `i mod C`, so class counts differ by at most one.
    pub fn generate(p: &TaskParams, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let centers: Vec<Vec<f64>> = (0..p.classes)
            .map(|_| (0..p.dim).map(|_| p.center_scale * normal(&mut rng)).collect())
            .collect();
        let draw = |n: usize, extra: f64, rng: &mut Rng| {
            let mut x = Vec::with_capacity(n * p.dim);
            let y: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
            for &c in &y {
                for &mu in &centers[c] {
                    let mut v = mu + p.cluster_std * normal(rng);
                    if extra > 0.0 {
                        v += extra * normal(rng);
                    }
                    x.push(v);
                }
            }
            Split { dim: p.dim, x, y }
        };
        let train = draw(p.n_train, 0.0, &mut rng);
        let val = draw(p.n_val, p.shift, &mut rng);
        Self { centers, train, val }
    }
}

/// Composition of one SGD minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub originals: usize,
    pub augmented: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy and error percentage of `net` on `split`.
pub fn evaluate(net: &Mlp, split: &Split) -> EnvState {
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for i in 0..split.len() {
        let logits = net.forward(split.row(i));
        let p = softmax(&logits);
        loss -= p[split.y[i]].max(1e-300).ln();
        let pred = (0..logits.len())
            .max_by(|a, b| logits[*a].total_cmp(&logits[*b]).then(b.cmp(a)))
            .expect("at least two classes");
        wrong += usize::from(pred != split.y[i]);
    }
    EnvState {
        val_loss: loss / split.len() as f64,
        val_wer: 100.0 * wrong as f64 / split.len() as f64,
    }
}

#[derive(Debug, Clone)]
pub struct LearnerEnv {
    params: TaskParams,
    beta_max: f64,
    task: SyntheticTask,
    net: Mlp,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    iterations: u64,
    state: EnvState,
    /// Filled when `record_batches` is on; cleared on reset.
    pub batch_log: Vec<BatchStats>,
    pub record_batches: bool,
    /// Every training index drawn since reset, when `record_batches` is on.
    pub trained_indices: Vec<usize>,
}

impl LearnerEnv {
    pub fn new(params: TaskParams, beta_max: f64) -> Result<Self> {
        params.validate()?;
        let mut env = Self {
            task: SyntheticTask::generate(&params, 0),
            net: Mlp::zeros(&[params.dim, params.hidden, params.classes]),
            params,
            beta_max,
            rng: rng_from_seed(0),
            order: Vec::new(),
            cursor: 0,
            iterations: 0,
            state: EnvState { val_loss: 0.0, val_wer: 0.0 },
            batch_log: Vec::new(),
            record_batches: false,
            trained_indices: Vec::new(),
        };
        env.reset_with(0, 0);
        Ok(env)
    }

    pub fn params(&self) -> &TaskParams {
        &self.params
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Fresh dataset from `task_seed`, fresh classifier and SGD stream from `init_seed`.
    pub fn reset_with(&mut self, task_seed: u64, init_seed: u64) -> EnvState {
        let p = &self.params;
        self.task = SyntheticTask::generate(p, task_seed);
        let mut init = rng_from_seed(init_seed);
        self.net = Mlp::he_uniform(&[p.dim, p.hidden, p.classes], &mut init);
        self.rng = rng_from_seed(derive_seed(init_seed, 1));
        self.order = (0..p.n_train).collect();
        self.cursor = p.n_train;
        self.iterations = 0;
        self.batch_log.clear();
        self.trained_indices.clear();
        self.state = evaluate(&self.net, &self.task.val);
        self.state
    }

    /// Next `batch_size` training indices, reshuffling at each epoch boundary.
    fn next_originals(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.params.batch_size);
        while out.len() < self.params.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn sgd_step(&mut self, beta: f64) -> Result<()> {
        let originals = self.next_originals();
        let ids: Vec<ClipId> = originals.iter().map(|&i| ClipId(i as u64)).collect();
        let copies = plan_copies(&ids, beta, &mut self.rng).map_err(|e| EnvError::Domain(e.to_string()))?;

        let dim = self.params.dim;
        let mut inputs: Vec<(Vec<f64>, usize)> = Vec::with_capacity(originals.len() + copies.len());
        for &i in &originals {
            inputs.push((self.task.train.row(i).to_vec(), self.task.train.y[i]));
        }
        for id in &copies {
            let i = id.0 as usize;
            let s = self.rng.random_range(self.params.aug_noise_min..=self.params.aug_noise_max);
            let row = self.task.train.row(i);
            let x: Vec<f64> = (0..dim).map(|k| row[k] + s * normal(&mut self.rng)).collect();
            inputs.push((x, self.task.train.y[i]));
        }
        if self.record_batches {
            self.batch_log.push(BatchStats {
                originals: originals.len(),
                augmented: copies.len(),
            });
            self.trained_indices.extend(&originals);
        }

        let n = inputs.len() as f64;
        let mut grads = self.net.zero_grads();
        for (x, y) in &inputs {
            let trace = self.net.forward_trace(x);
            let mut d = softmax(trace.output());
            d[*y] -= 1.0;
            d.iter_mut().for_each(|v| *v /= n);
            self.net.backward(&trace, &d, &mut grads);
        }
        let lr = self.params.lr;
        for (layer, g) in self.net.layers_mut().iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        if !self.net.is_finite() {
            return Err(EnvError::Training("classifier parameters became non-finite".into()));
        }
        self.iterations += 1;
        Ok(())
    }
}

impl TrainingEnvironment for LearnerEnv {
    fn reset(&mut self, seed: u64) -> Result<EnvState> {
        let task_seed = self.params.task_seed.unwrap_or_else(|| derive_seed(seed, 0));
        Ok(self.reset_with(task_seed, derive_seed(seed, 1)))
    }

    fn train_chunk(&mut self, beta: f64, iterations: usize) -> Result<EnvState> {
        if !(0.0..=self.beta_max).contains(&beta) {
            return Err(EnvError::Domain(format!("beta {beta} outside [0, {}]", self.beta_max)));
        }
        if iterations == 0 {
            return Ok(self.state);
        }
        for _ in 0..iterations {
            self.sgd_step(beta)?;
        }
        self.state = evaluate(&self.net, &self.task.val);
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> TaskParams {
        TaskParams {
            n_train: 400,
            n_val: 100,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_classifier_is_near_chance() {
        let mean: f64 = (0..20)
            .map(|s| {
                let mut env = LearnerEnv::new(TaskParams::default(), 4.0).unwrap();
                env.reset_with(s, 1000 + s).val_wer
            })
            .sum::<f64>()
            / 20.0;
        assert!((mean - 75.0).abs() <= 5.0, "mean initial error {mean}");
    }

    #[test]
    fn classes_are_balanced() {
        let task = SyntheticTask::generate(&TaskParams { n_train: 2001, ..Default::default() }, 3);
        let mut counts = [0usize; 4];
        task.train.y.iter().for_each(|&c| counts[c] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn train_and_validation_are_disjoint() {
        let task = SyntheticTask::generate(&TaskParams::default(), 5);
        let key = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let train: HashSet<_> = (0..task.train.len()).map(|i| key(task.train.row(i))).collect();
        assert!((0..task.val.len()).all(|i| !train.contains(&key(task.val.row(i)))));
    }

    #[test]
    fn only_training_rows_are_used() {
        let mut env = LearnerEnv::new(small(), 4.0).unwrap();
        env.record_batches = true;
        env.reset_with(1, 2);
        env.train_chunk(1.4, 30).unwrap();
        assert!(env.trained_indices.iter().all(|&i| i < 400));
        // after a full epoch every training row has been visited exactly once
        let first_epoch: HashSet<_> = env.trained_indices[..400].iter().collect();
        assert_eq!(first_epoch.len(), 400);
    }

    #[test]
    fn deterministic_under_fixed_seeds() {
        let run = || {
            let mut env = LearnerEnv::new(small(), 4.0).unwrap();
            env.reset(11).unwrap();
            [0.0, 1.2, 3.4].map(|b| env.train_chunk(b, 5).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_iterations_leave_state_unchanged() {
        let mut env = LearnerEnv::new(small(), 4.0).unwrap();
        let s0 = env.reset(3).unwrap();
        let net = env.network().clone();
        assert_eq!(env.train_chunk(2.0, 0).unwrap(), s0);
        assert_eq!(env.network(), &net);
    }

    #[test]
    fn beta_zero_batches_have_no_copies() {
        let mut env = LearnerEnv::new(small(), 4.0).unwrap();
        env.record_batches = true;
        env.reset(3).unwrap();
        env.train_chunk(0.0, 20).unwrap();
        assert!(env.batch_log.iter().all(|b| b.augmented == 0 && b.originals == 32));
    }

    #[test]
    fn augmented_count_matches_beta() {
        // over an epoch of batches, copies ~ 32·n·floor(β) + Binomial(32·n, frac(β))
        let mut env = LearnerEnv::new(TaskParams::default(), 4.0).unwrap();
        env.record_batches = true;
        env.reset(8).unwrap();
        let beta = 1.4;
        env.train_chunk(beta, 63).unwrap();
        let n: usize = env.batch_log.iter().map(|b| b.originals).sum();
        let extra = env.batch_log.iter().map(|b| b.augmented).sum::<usize>() - n;
        let mean = n as f64 * 0.4;
        let sd = (n as f64 * 0.4 * 0.6).sqrt();
        assert!((extra as f64 - mean).abs() < 4.0 * sd, "extra {extra} vs {mean} ± {sd}");
    }

    #[test]
    fn training_reduces_validation_error() {
        let mut env = LearnerEnv::new(TaskParams::default(), 4.0).unwrap();
        let s0 = env.reset(4).unwrap();
        let s1 = env.train_chunk(1.0, 300).unwrap();
        assert!(s1.val_wer < s0.val_wer - 20.0, "{s0:?} -> {s1:?}");
        assert!((0.0..=100.0).contains(&s1.val_wer));
    }

    #[test]
    fn beta_out_of_range_is_rejected() {
        let mut env = LearnerEnv::new(small(), 4.0).unwrap();
        env.reset(0).unwrap();
        assert!(env.train_chunk(4.2, 1).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let p = TaskParams { dim: 3, hidden: 4, classes: 3, ..small() };
        let mut rng = rng_from_seed(9);
        let net = Mlp::he_uniform(&[3, 4, 3], &mut rng);
        let x = [0.3, -0.7, 1.1];
        let y = 2;
        let loss = |n: &Mlp| -softmax(&n.forward(&x))[y].ln();
        let trace = net.forward_trace(&x);
        let mut d = softmax(trace.output());
        d[y] -= 1.0;
        let mut grads = net.zero_grads();
        net.backward(&trace, &d, &mut grads);
        let analytic = grads.flatten();
        let h = 1e-5;
        let count = analytic.len();
        for k in 0..count {
            let bump = |sign: f64| {
                let mut n = net.clone();
                *n.params_mut().nth(k).unwrap() += sign * h;
                loss(&n)
            };
            let numeric = (bump(1.0) - bump(-1.0)) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
            assert!((analytic[k] - numeric).abs() / denom < 1e-4, "param {k}");
        }
        let _ = p;
    }
}
