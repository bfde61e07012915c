//! Conservative reach-avoid deep Q-learning with a small multilayer
//! perceptron.
//!
//! The network maps a state to `|U| * |D|` joint-action heads; head
//! `i * |D| + j` is `Q(x, u_i, d_j)`. Hidden layers use rectifiers, the
//! output layer is affine.

mod replay;
mod train;

pub use replay::{ReplayBuffer, Transition};
pub use train::{compute_targets, extract_learned_set, probe_residual, train, EpochLog, TrainConfig, TrainOutcome};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ValueFunction;

pub const CHECKPOINT_FORMAT: &str = "reachavoid-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One affine layer; `weights` is row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    #[inline]
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(dot + self.bias[o]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPParams {
    pub n_controls: usize,
    pub n_disturbances: usize,
    pub layers: Vec<Layer>,
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `max_i min_j q[i * n_d + j]` with the matching control index.
pub fn max_min_heads(q: &[f64], n_controls: usize, n_disturbances: usize) -> (usize, f64) {
    crate::backup::argmax_min(n_controls, n_disturbances, |i, j| q[i * n_disturbances + j])
}

impl MLPParams {
    /// `widths = [n, hidden..]`; the output layer with `|U| * |D|` heads is appended.
    pub fn zeros(widths: &[usize], n_controls: usize, n_disturbances: usize) -> Result<Self> {
        let all = Self::all_widths(widths, n_controls, n_disturbances)?;
        let layers = all.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { n_controls, n_disturbances, layers })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng>(widths: &[usize], n_controls: usize, n_disturbances: usize, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(widths, n_controls, n_disturbances)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    fn all_widths(widths: &[usize], n_controls: usize, n_disturbances: usize) -> Result<Vec<usize>> {
        if widths.is_empty() || widths.contains(&0) || n_controls == 0 || n_disturbances == 0 {
            return Err(Error::InvalidConfig(format!(
                "network widths must be non-empty and positive, got {widths:?} with {n_controls}x{n_disturbances} heads"
            )));
        }
        let mut all = widths.to_vec();
        all.push(n_controls * n_disturbances);
        Ok(all)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_heads(&self) -> usize {
        self.n_controls * self.n_disturbances
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter in layer order: weights then bias per layer.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if k < layer.weights.len() {
                return &mut layer.weights[k];
            }
            k -= layer.weights.len();
            if k < layer.bias.len() {
                return &mut layer.bias[k];
            }
            k -= layer.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// `self += alpha * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, alpha: f64, other: &MLPParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.layers.iter().position(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
            Some(layer) => Err(Error::NonFiniteParameter { layer }),
            None => Ok(()),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!("layer {k} has inconsistent shapes"));
            }
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return bad(format!("layer {k} input width does not match layer {}", k - 1));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(self.num_heads()) {
            return bad("output width must equal |U| * |D|".into());
        }
        Ok(())
    }

    /// Forward pass without the finiteness check.
    pub(crate) fn heads(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Activations of every layer; `acts[0]` is the input, the last entry the heads.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[k], &mut out);
            if k < last {
                out.iter_mut().for_each(|v| *v = relu(*v));
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates `scale * dQ_head/dtheta` into `grad`.
    fn backprop_head(&self, acts: &[Vec<f64>], head: usize, scale: f64, grad: &mut MLPParams) {
        let mut delta = vec![0.0; self.num_heads()];
        delta[head] = scale;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let input = &acts[k];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // Rectifier derivative: active iff the stored activation is positive.
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// `V_theta(x) = max_u min_d Q_theta(x, u, d)` without the finiteness check.
    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        max_min_heads(&self.heads(x), self.n_controls, self.n_disturbances).1
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            widths: self.widths(),
            weight_order: "row-major [outputs][inputs]".into(),
            params: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        ck.params.check_shapes()?;
        ck.params.check_finite()?;
        if ck.params.widths() != ck.widths {
            return Err(Error::InvalidConfig("checkpoint widths disagree with its layers".into()));
        }
        Ok(ck.params)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    widths: Vec<usize>,
    weight_order: String,
    params: MLPParams,
}

impl ValueFunction for MLPParams {
    fn value(&self, x: &[f64]) -> f64 {
        self.value_unchecked(x)
    }
}

/// All `|U| * |D|` heads at `x`.
pub fn q_forward(params: &MLPParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_finite()?;
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: x.len() });
    }
    Ok(params.heads(x))
}

/// `V_theta(x) = max_u min_d Q_theta(x, u, d)`.
pub fn value(params: &MLPParams, x: &[f64]) -> Result<f64> {
    let q = q_forward(params, x)?;
    Ok(max_min_heads(&q, params.n_controls, params.n_disturbances).1)
}

/// `sum_j (y_j - Q_j)^2 + lambda * Q_j` over the batch, where `Q_j` is the
/// head of the stored action pair, and its gradient.
pub fn loss_and_grad(
    params: &MLPParams,
    batch: &[Transition],
    targets: &[f64],
    lambda: f64,
) -> Result<(f64, MLPParams)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::InvalidConfig(format!(
            "batch of {} transitions with {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let mut grad =
        MLPParams { layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(), ..*params };
    let mut loss = 0.0;
    for (tr, &y) in batch.iter().zip(targets) {
        let head = tr.u * params.n_disturbances + tr.d;
        let acts = params.forward_cached(&tr.x);
        let q = acts[acts.len() - 1][head];
        loss += (y - q) * (y - q) + lambda * q;
        params.backprop_head(&acts, head, 2.0 * (q - y) + lambda, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(floor)
}

/// Compares [`loss_and_grad`] with central differences of step `step`.
pub fn finite_difference_check(
    params: &MLPParams,
    batch: &[Transition],
    targets: &[f64],
    lambda: f64,
    step: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (_, grad) = loss_and_grad(params, batch, targets, lambda)?;
    let analytic = grad.flat();
    let mut probe = params.clone();
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + step;
        let plus = loss_and_grad(&probe, batch, targets, lambda)?.0;
        *probe.param_mut(k) = orig - step;
        let minus = loss_and_grad(&probe, batch, targets, lambda)?.0;
        *probe.param_mut(k) = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(a, numeric, floor);
        if err > worst.max_rel_error {
            worst = GradCheck { max_rel_error: err, worst_index: k, analytic: a, numeric };
        }
    }
    Ok(worst)
}
