//! Dense ReLU networks with hand-written backpropagation and Adam.
//!
//! [`Mlp`] is the general machinery (any layer sizes, ReLU on hidden layers,
//! identity output). [`QNetwork`] pins it to the 2-64-64-3 action-value
//! network; the classifier in [`crate::learner_env`] reuses [`Mlp`] directly.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from_seed;

#[derive(Debug, Error, PartialEq)]
pub enum QnetError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite gradient at parameter {0}; update rejected")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, QnetError>;

/// A fully connected layer, `y = W·x + b`, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// He-uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks_exact(self.in_dim).map(<[f64]>::to_vec).collect()
    }

    fn from_rows(rows: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if out_dim == 0 || in_dim == 0 || rows.iter().any(|r| r.len() != in_dim) || bias.len() != out_dim {
            return Err(QnetError::Shape("ragged or empty weight matrix".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights: rows.concat(),
            bias: bias.to_vec(),
        })
    }
}

/// Layer activations recorded by [`Mlp::forward_trace`]; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-parameter partial derivatives with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= k);
        }
    }
}

impl Mlp {
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer dims {dims:?}");
        Self {
            layers: dims.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer dims {dims:?}");
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() || layers.windows(2).any(|w| w[0].out_dim != w[1].in_dim) {
            return Err(QnetError::Shape("layer dimensions do not chain".into()));
        }
        Ok(Self { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(activations.last().unwrap(), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(out);
        }
        ForwardTrace { activations }
    }

    /// Accumulate `∂L/∂θ` into `grads` given `d_out = ∂L/∂output` for one sample.
    pub fn backward(&self, trace: &ForwardTrace, d_out: &[f64], grads: &mut MlpGrads) {
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let g = &mut grads.layers[i];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if i == 0 {
                break;
            }
            // through W, then through the ReLU of the previous layer
            let mut prev = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One bias-corrected Adam update. Rejects the whole step, leaving
    /// parameters and moments untouched, if any gradient is non-finite.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut f64>,
        grads: &[f64],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(QnetError::Shape(format!(
                "{} gradients for {} optimizer slots",
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(QnetError::NonFiniteGradient(i));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut n = 0;
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            n += 1;
        }
        debug_assert_eq!(n, grads.len());
        Ok(())
    }
}

/// The action-value network: 2 inputs, two 64-unit ReLU layers, 3 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    mlp: Mlp,
}

/// Gradients of a [`QNetwork`] loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub MlpGrads);

impl QNetwork {
    pub const ARCH: [usize; 4] = [2, 64, 64, 3];

    pub fn init(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            mlp: Mlp::he_uniform(&Self::ARCH, &mut rng),
        }
    }

    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(&Self::ARCH),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.dims() != Self::ARCH {
            return Err(QnetError::Shape(format!("expected {:?}, got {:?}", Self::ARCH, mlp.dims())));
        }
        Ok(Self { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn forward(&self, state: [f64; 2]) -> Result<[f64; 3]> {
        if !state.iter().all(|v| v.is_finite()) {
            return Err(QnetError::Domain(format!("non-finite state {state:?}")));
        }
        let q = self.mlp.forward(&state);
        Ok([q[0], q[1], q[2]])
    }

    /// Mean squared TD error on the selected actions and its gradient.
    pub fn loss_and_grad(
        &self,
        states: &[[f64; 2]],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, GradientSet)> {
        let n = states.len();
        if n == 0 {
            return Err(QnetError::Domain("empty batch".into()));
        }
        if actions.len() != n || targets.len() != n {
            return Err(QnetError::Domain(format!(
                "batch lengths differ: {} states, {} actions, {} targets",
                n,
                actions.len(),
                targets.len()
            )));
        }
        let mut grads = self.mlp.zero_grads();
        let mut loss = 0.0;
        for ((s, &a), &y) in states.iter().zip(actions).zip(targets) {
            if a >= 3 {
                return Err(QnetError::Domain(format!("action index {a} out of range")));
            }
            if !s.iter().all(|v| v.is_finite()) || !y.is_finite() {
                return Err(QnetError::Domain("non-finite state or target".into()));
            }
            let trace = self.mlp.forward_trace(s);
            let err = trace.output()[a] - y;
            loss += err * err;
            let mut d_out = [0.0; 3];
            d_out[a] = 2.0 * err / n as f64;
            self.mlp.backward(&trace, &d_out, &mut grads);
        }
        Ok((loss / n as f64, GradientSet(grads)))
    }

    pub fn adam_step(&mut self, grads: &GradientSet, opt: &mut AdamState, lr: f64) -> Result<()> {
        if grads.0.layers.len() != self.mlp.layers.len()
            || grads
                .0
                .layers
                .iter()
                .zip(&self.mlp.layers)
                .any(|(g, l)| g.in_dim != l.in_dim || g.out_dim != l.out_dim)
        {
            return Err(QnetError::Shape("gradient set does not match network".into()));
        }
        opt.update(self.mlp.params_mut(), &grads.0.flatten(), lr)
    }

    pub fn to_checkpoint(&self, opt_state: Option<&AdamState>) -> QnetCheckpoint {
        let l = &self.mlp.layers;
        QnetCheckpoint {
            arch: Self::ARCH.to_vec(),
            w1: l[0].rows(),
            b1: l[0].bias.clone(),
            w2: l[1].rows(),
            b2: l[1].bias.clone(),
            w3: l[2].rows(),
            b3: l[2].bias.clone(),
            opt_state: opt_state.cloned(),
        }
    }

    pub fn from_checkpoint(ck: &QnetCheckpoint) -> Result<Self> {
        if ck.arch != Self::ARCH {
            return Err(QnetError::Shape(format!("checkpoint arch {:?}", ck.arch)));
        }
        let layers = vec![
            Dense::from_rows(&ck.w1, &ck.b1)?,
            Dense::from_rows(&ck.w2, &ck.b2)?,
            Dense::from_rows(&ck.w3, &ck.b3)?,
        ];
        let net = Self::from_mlp(Mlp::from_layers(layers)?)?;
        if !net.mlp.is_finite() {
            return Err(QnetError::Domain("checkpoint holds non-finite parameters".into()));
        }
        if let Some(opt) = &ck.opt_state {
            if opt.m.len() != net.param_count() || opt.v.len() != net.param_count() {
                return Err(QnetError::Shape("optimizer state size mismatch".into()));
            }
        }
        Ok(net)
    }
}

/// JSON checkpoint layout: nested `[out][in]` weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnetCheckpoint {
    pub arch: Vec<usize>,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    #[serde(rename = "W3")]
    pub w3: Vec<Vec<f64>>,
    pub b3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_state: Option<AdamState>,
}
