//! Single-layer LSTM mapping a history window to lower/upper quantile
//! forecasts of per-phase prices and aggregate loads, with exact gradients
//! by backpropagation through time.
//!
//! The step inputs are the per-bus loads and weather channels of each
//! history step; the trailing scalar (latest price) joins the final hidden
//! state at the heads. Outputs live in standardized target units; the
//! upper head is `lower + softplus(gap)` so bounds are ordered by
//! construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
use thiserror::Error;

use crate::robust::BoxSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("cached activations do not match these parameters")]
    CacheMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid predictor configuration: {0}")]
    InvalidConfig(String),
}

/// Targets per step: three prices, then three loads.
pub const TARGETS_PER_STEP: usize = 6;

/// Small constant added to the Gaussian scale in the interval likelihood.
pub const NLL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    /// Features per history step (bus loads plus weather channels).
    pub step_inputs: usize,
    pub history: usize,
    pub hidden: usize,
    pub horizon: usize,
}

impl Shape {
    pub fn feature_dim(&self) -> usize {
        self.step_inputs * self.history + 1
    }

    pub fn outputs(&self) -> usize {
        TARGETS_PER_STEP * self.horizon
    }

    fn head_in(&self) -> usize {
        self.hidden + 1
    }

    /// `(name, rows, cols)` of every parameter tensor, in storage order.
    pub fn tensors(&self) -> [(&'static str, usize, usize); 7] {
        let (h, i, k) = (self.hidden, self.step_inputs, self.outputs());
        [
            ("w_input", 4 * h, i),
            ("w_hidden", 4 * h, h),
            ("b_gates", 4 * h, 1),
            ("w_lower", k, self.head_in()),
            ("b_lower", k, 1),
            ("w_gap", k, self.head_in()),
            ("b_gap", k, 1),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.1 * t.2).sum()
    }

    /// Offset of each tensor in the flat parameter vector.
    pub fn offsets(&self) -> [usize; 8] {
        let mut out = [0; 8];
        for (k, t) in self.tensors().iter().enumerate() {
            out[k + 1] = out[k] + t.1 * t.2;
        }
        out
    }
}

/// Flat parameter vector; gates are stacked in the order input, forget,
/// cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: Shape) -> Self {
        LstmParams { shape, data: vec![0.0; shape.n_params()] }
    }

    /// Truncated-normal weights (two standard deviations), zero biases and
    /// a forget-gate bias of one.
    pub fn init(shape: Shape, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut p = Self::zeros(shape);
        let off = shape.offsets();
        for (k, (name, _, _)) in shape.tensors().iter().enumerate() {
            if name.starts_with("b_") {
                continue;
            }
            for v in &mut p.data[off[k]..off[k + 1]] {
                *v = loop {
                    let z: f64 = normal.sample(&mut rng);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                };
            }
        }
        let h = shape.hidden;
        for v in &mut p.data[off[2] + h..off[2] + 2 * h] {
            *v = 1.0;
        }
        p
    }

    pub fn tensor(&self, k: usize) -> &[f64] {
        let off = self.shape.offsets();
        &self.data[off[k]..off[k + 1]]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-channel affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Standardizer { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Mean and standard deviation over rows; constant channels get unit
    /// scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for k in 0..n {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = (0..n)
            .map(|k| {
                let var = (sq[k] / c - mean[k] * mean[k]).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, k: usize, v: f64) -> f64 {
        (v - self.mean[k]) / self.std[k]
    }

    pub fn invert(&self, k: usize, v: f64) -> f64 {
        self.mean[k] + self.std[k] * v
    }
}

/// Feature and target scaling persisted with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// One entry per step-input channel plus one for the trailing scalar.
    pub features: Standardizer,
    /// One entry per target channel (three prices, three loads).
    pub targets: Standardizer,
}

impl Normalization {
    pub fn identity(shape: &Shape) -> Self {
        Normalization {
            features: Standardizer::identity(shape.step_inputs + 1),
            targets: Standardizer::identity(TARGETS_PER_STEP),
        }
    }

    /// Fits channel statistics on `(features, target)` pairs.
    pub fn fit<'a>(shape: &Shape, pairs: impl Iterator<Item = (&'a [f64], Vec<f64>)> + Clone) -> Self {
        let s = shape.step_inputs;
        let mut feat_rows: Vec<Vec<f64>> = Vec::new();
        let mut targ_rows: Vec<Vec<f64>> = Vec::new();
        for (f, t) in pairs {
            for m in 0..shape.history {
                let mut row = f[m * s..(m + 1) * s].to_vec();
                row.push(f[f.len() - 1]);
                feat_rows.push(row);
            }
            for step in t.chunks(TARGETS_PER_STEP) {
                targ_rows.push(step.to_vec());
            }
        }
        Normalization {
            features: Standardizer::fit(feat_rows.iter().map(|r| r.as_slice()), s + 1),
            targets: Standardizer::fit(targ_rows.iter().map(|r| r.as_slice()), TARGETS_PER_STEP),
        }
    }

    pub fn target_to_std(&self, target: &[f64]) -> Vec<f64> {
        target.iter().enumerate().map(|(k, &v)| self.targets.apply(k % TARGETS_PER_STEP, v)).collect()
    }
}

/// Lower/upper bounds per step, `[price a, b, c, load a, b, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub lower: Vec<[f64; 6]>,
    pub upper: Vec<[f64; 6]>,
}

impl QuantileForecast {
    pub fn from_flat(lower: &[f64], upper: &[f64]) -> Self {
        let chunk = |v: &[f64]| v.chunks(6).map(|c| std::array::from_fn(|k| c[k])).collect();
        QuantileForecast { lower: chunk(lower), upper: chunk(upper) }
    }

    pub fn horizon(&self) -> usize {
        self.lower.len()
    }

    pub fn flat_lower(&self) -> Vec<f64> {
        self.lower.iter().flatten().copied().collect()
    }

    pub fn flat_upper(&self) -> Vec<f64> {
        self.upper.iter().flatten().copied().collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.flat_lower().iter().zip(self.flat_upper()).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    fn part(&self, off: usize) -> BoxSet {
        BoxSet {
            lower: self.lower.iter().map(|v| [v[off], v[off + 1], v[off + 2]]).collect(),
            upper: self.upper.iter().map(|v| [v[off], v[off + 1], v[off + 2]]).collect(),
        }
    }

    pub fn price_box(&self) -> BoxSet {
        self.part(0)
    }

    pub fn load_box(&self) -> BoxSet {
        self.part(3)
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    shape: Shape,
    n_params: usize,
    xs: Vec<Vec<f64>>,
    /// Gate activations after their nonlinearities, per step.
    gates: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
    head_in: Vec<f64>,
    gap_pre: Vec<f64>,
    /// Standardized outputs.
    pub lower_std: Vec<f64>,
    pub upper_std: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `y += W x` for a row-major `rows x cols` matrix.
fn gemv_acc(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += W^T x`.
fn gemv_t_acc(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, a) in y.iter_mut().zip(row) {
            *yc += a * xr;
        }
    }
}

/// `G += x y^T`.
fn outer_acc(g: &mut [f64], cols: usize, x: &[f64], y: &[f64]) {
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        for (gc, yc) in g[r * cols..(r + 1) * cols].iter_mut().zip(y) {
            *gc += xr * yc;
        }
    }
}

/// Forward pass in standardized units; `window` holds raw features.
pub fn forward(params: &LstmParams, norm: &Normalization, window: &[f64]) -> Result<Cache, PredictorError> {
    let sh = params.shape;
    if window.len() != sh.feature_dim() {
        return Err(PredictorError::DimensionMismatch {
            what: "feature window",
            expected: sh.feature_dim(),
            found: window.len(),
        });
    }
    if params.data.len() != sh.n_params() {
        return Err(PredictorError::DimensionMismatch {
            what: "parameters",
            expected: sh.n_params(),
            found: params.data.len(),
        });
    }
    let (h, s) = (sh.hidden, sh.step_inputs);
    let w_in = params.tensor(0);
    let w_hh = params.tensor(1);
    let b = params.tensor(2);
    let mut xs = Vec::with_capacity(sh.history);
    let mut gates = Vec::with_capacity(sh.history);
    let mut cs = Vec::with_capacity(sh.history + 1);
    let mut hs = Vec::with_capacity(sh.history + 1);
    cs.push(vec![0.0; h]);
    hs.push(vec![0.0; h]);
    for m in 0..sh.history {
        let x: Vec<f64> = (0..s).map(|k| norm.features.apply(k, window[m * s + k])).collect();
        let mut pre = b.to_vec();
        gemv_acc(w_in, s, &x, &mut pre);
        gemv_acc(w_hh, h, &hs[m], &mut pre);
        let mut g = vec![0.0; 4 * h];
        for u in 0..h {
            g[u] = sigmoid(pre[u]);
            g[h + u] = sigmoid(pre[h + u]);
            g[2 * h + u] = pre[2 * h + u].tanh();
            g[3 * h + u] = sigmoid(pre[3 * h + u]);
        }
        let c: Vec<f64> = (0..h).map(|u| g[h + u] * cs[m][u] + g[u] * g[2 * h + u]).collect();
        let hn: Vec<f64> = (0..h).map(|u| g[3 * h + u] * c[u].tanh()).collect();
        xs.push(x);
        gates.push(g);
        cs.push(c);
        hs.push(hn);
    }
    let mut head_in = hs[sh.history].clone();
    head_in.push(norm.features.apply(s, window[window.len() - 1]));
    let k = sh.outputs();
    let mut lower_std = params.tensor(4).to_vec();
    gemv_acc(params.tensor(3), sh.head_in(), &head_in, &mut lower_std);
    let mut gap_pre = params.tensor(6).to_vec();
    gemv_acc(params.tensor(5), sh.head_in(), &head_in, &mut gap_pre);
    let upper_std = (0..k).map(|o| lower_std[o] + softplus(gap_pre[o])).collect();
    Ok(Cache { shape: sh, n_params: params.data.len(), xs, gates, cs, hs, head_in, gap_pre, lower_std, upper_std })
}

/// Maps standardized outputs back to raw units.
pub fn destandardize(norm: &Normalization, cache: &Cache) -> QuantileForecast {
    let f = |v: &[f64]| -> Vec<f64> {
        v.iter().enumerate().map(|(k, &x)| norm.targets.invert(k % TARGETS_PER_STEP, x)).collect()
    };
    QuantileForecast::from_flat(&f(&cache.lower_std), &f(&cache.upper_std))
}

/// Gradient of `d_lower . lower_std + d_upper . upper_std` with respect
/// to every parameter.
pub fn backward(
    params: &LstmParams,
    cache: &Cache,
    d_lower: &[f64],
    d_upper: &[f64],
) -> Result<Vec<f64>, PredictorError> {
    let sh = params.shape;
    if cache.shape != sh || cache.n_params != params.data.len() {
        return Err(PredictorError::CacheMismatch);
    }
    let k = sh.outputs();
    if d_lower.len() != k || d_upper.len() != k {
        return Err(PredictorError::DimensionMismatch {
            what: "upstream gradient",
            expected: k,
            found: d_lower.len().min(d_upper.len()),
        });
    }
    let (h, s, hi) = (sh.hidden, sh.step_inputs, sh.head_in());
    let off = sh.offsets();
    let mut grad = vec![0.0; sh.n_params()];

    // heads: lower = W_l z + b_l, upper = lower + softplus(W_g z + b_g)
    let d_lo: Vec<f64> = (0..k).map(|o| d_lower[o] + d_upper[o]).collect();
    let d_gp: Vec<f64> = (0..k).map(|o| d_upper[o] * sigmoid(cache.gap_pre[o])).collect();
    outer_acc(&mut grad[off[3]..off[4]], hi, &d_lo, &cache.head_in);
    grad[off[4]..off[5]].copy_from_slice(&d_lo);
    outer_acc(&mut grad[off[5]..off[6]], hi, &d_gp, &cache.head_in);
    grad[off[6]..off[7]].copy_from_slice(&d_gp);
    let mut dz = vec![0.0; hi];
    gemv_t_acc(params.tensor(3), hi, &d_lo, &mut dz);
    gemv_t_acc(params.tensor(5), hi, &d_gp, &mut dz);

    // backpropagation through time
    let w_hh = params.tensor(1);
    let mut dh = dz[..h].to_vec();
    let mut dc = vec![0.0; h];
    let (g_in, rest) = grad[off[0]..off[3]].split_at_mut(off[1] - off[0]);
    let (g_hh, g_b) = rest.split_at_mut(off[2] - off[1]);
    let mut dpre = vec![0.0; 4 * h];
    for m in (0..sh.history).rev() {
        let g = &cache.gates[m];
        let c = &cache.cs[m + 1];
        let c_prev = &cache.cs[m];
        for u in 0..h {
            let (i, f, gg, o) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
            let tc = c[u].tanh();
            let dcu = dc[u] + dh[u] * o * (1.0 - tc * tc);
            dpre[u] = dcu * gg * i * (1.0 - i);
            dpre[h + u] = dcu * c_prev[u] * f * (1.0 - f);
            dpre[2 * h + u] = dcu * i * (1.0 - gg * gg);
            dpre[3 * h + u] = dh[u] * tc * o * (1.0 - o);
            dc[u] = dcu * f;
        }
        outer_acc(g_in, s, &dpre, &cache.xs[m]);
        outer_acc(g_hh, h, &dpre, &cache.hs[m]);
        for (gb, d) in g_b.iter_mut().zip(&dpre) {
            *gb += d;
        }
        let mut dh_prev = vec![0.0; h];
        gemv_t_acc(w_hh, h, &dpre, &mut dh_prev);
        dh = dh_prev;
    }
    Ok(grad)
}

/// `z_{1-alpha/2}` of the standard normal.
pub fn z_score(alpha: f64) -> f64 {
    StatNormal::new(0.0, 1.0).expect("unit normal").inverse_cdf(1.0 - alpha / 2.0)
}

/// Gaussian interval likelihood summed over all entries, with
/// `mu = (lower + upper) / 2` and `sigma = (upper - lower) / (2 z) + eps`.
/// Returns the loss and its gradients with respect to `lower` and `upper`.
pub fn nll_loss(lower: &[f64], upper: &[f64], truth: &[f64], alpha: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let z = z_score(alpha);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut loss = 0.0;
    let mut dl = vec![0.0; lower.len()];
    let mut du = vec![0.0; lower.len()];
    for k in 0..lower.len() {
        let mu = 0.5 * (lower[k] + upper[k]);
        let sigma = (upper[k] - lower[k]) / (2.0 * z) + NLL_EPS;
        let r = truth[k] - mu;
        loss += 0.5 * ln2pi + sigma.ln() + 0.5 * r * r / (sigma * sigma);
        let d_mu = -r / (sigma * sigma);
        let d_sigma = 1.0 / sigma - r * r / (sigma * sigma * sigma);
        dl[k] = 0.5 * d_mu - d_sigma / (2.0 * z);
        du[k] = 0.5 * d_mu + d_sigma / (2.0 * z);
    }
    (loss, dl, du)
}

/// Standard Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], lr: f64, state: &mut AdamState) -> Result<(), PredictorError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(PredictorError::DimensionMismatch {
            what: "optimizer state",
            expected: params.len(),
            found: grads.len(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for k in 0..params.len() {
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * grads[k];
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * grads[k] * grads[k];
        let mh = state.m[k] / bc1;
        let vh = state.v[k] / bc2;
        params[k] -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// Weights plus everything needed to use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub params: LstmParams,
    pub norm: Normalization,
    /// Nominal miscoverage the interval width is tied to.
    pub alpha: f64,
}

impl Forecaster {
    pub fn forward(&self, window: &[f64]) -> Result<(QuantileForecast, Cache), PredictorError> {
        let cache = forward(&self.params, &self.norm, window)?;
        Ok((destandardize(&self.norm, &cache), cache))
    }

    pub fn predict(&self, window: &[f64]) -> Result<QuantileForecast, PredictorError> {
        Ok(self.forward(window)?.0)
    }

    /// Backward pass for upstream gradients given in raw units.
    pub fn backward_raw(&self, cache: &Cache, d_lower: &[f64], d_upper: &[f64]) -> Result<Vec<f64>, PredictorError> {
        let scale = |d: &[f64]| -> Vec<f64> {
            d.iter().enumerate().map(|(k, &v)| v * self.norm.targets.std[k % TARGETS_PER_STEP]).collect()
        };
        backward(&self.params, cache, &scale(d_lower), &scale(d_upper))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub forecaster: Forecaster,
    /// Free-form training metadata (mode, loss weight, epochs, seed, ...).
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(forecaster: Forecaster) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, forecaster, metadata: serde_json::Map::new() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PredictorError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(PredictorError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        let p = &c.forecaster.params;
        if p.data.len() != p.shape.n_params() {
            return Err(PredictorError::Checkpoint(format!(
                "{} weights for a shape needing {}",
                p.data.len(),
                p.shape.n_params()
            )));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(hidden: usize) -> Shape {
        Shape { step_inputs: 3, history: 4, hidden, horizon: 2 }
    }

    fn window(sh: &Shape, k: f64) -> Vec<f64> {
        (0..sh.feature_dim()).map(|i| ((i as f64 + 1.0) * 0.37 * k).sin()).collect()
    }

    #[test]
    fn zero_parameters_give_constant_gap() {
        let sh = shape(4);
        let p = LstmParams::zeros(sh);
        let n = Normalization::identity(&sh);
        let a = forward(&p, &n, &window(&sh, 1.0)).unwrap();
        let b = forward(&p, &n, &window(&sh, 2.0)).unwrap();
        assert!(a.lower_std.iter().all(|&v| v == 0.0));
        assert!(a.upper_std.iter().all(|&v| (v - 2f64.ln()).abs() < 1e-15));
        assert_eq!(a.upper_std, b.upper_std);
    }

    #[test]
    fn different_windows_give_different_states() {
        let sh = shape(4);
        let p = LstmParams::init(sh, 0.3, 1);
        let n = Normalization::identity(&sh);
        let a = forward(&p, &n, &window(&sh, 1.0)).unwrap();
        let b = forward(&p, &n, &window(&sh, 2.0)).unwrap();
        assert_ne!(a.hs.last(), b.hs.last());
        assert!(a.lower_std.iter().zip(&a.upper_std).all(|(l, u)| l <= u));
        assert!(forward(&p, &n, &[0.0; 3]).is_err());
    }

    #[test]
    fn scalar_cell_matches_hand_recurrence() {
        let sh = Shape { step_inputs: 1, history: 1, hidden: 1, horizon: 1 };
        let mut p = LstmParams::zeros(sh);
        let off = sh.offsets();
        // w_input gates i, f, g, o; biases
        p.data[off[0]..off[1]].copy_from_slice(&[0.5, -0.3, 0.8, 0.2]);
        p.data[off[2]..off[3]].copy_from_slice(&[0.1, 1.0, -0.2, 0.0]);
        // lower head reads h with weight 1
        for o in 0..6 {
            p.data[off[3] + o * 2] = 1.0;
        }
        let n = Normalization::identity(&sh);
        let x = 0.7;
        let c = forward(&p, &n, &[x, 0.0]).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.1);
        let g = (0.8 * x - 0.2).tanh();
        let o = sig(0.2 * x);
        let cell = i * g;
        let h = o * cell.tanh();
        assert!((c.lower_std[0] - h).abs() < 1e-15);
    }

    #[test]
    fn nll_examples() {
        let alpha = 0.1;
        let z = z_score(alpha);
        let (l, u) = (vec![-1.0], vec![1.0]);
        let sigma = 1.0 / z + NLL_EPS;
        let (at_mid, _, _) = nll_loss(&l, &u, &[0.0], alpha);
        let expect = 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        assert!((at_mid - expect).abs() < 1e-12);
        let (off, _, _) = nll_loss(&l, &u, &[sigma], alpha);
        assert!((off - at_mid - 0.5).abs() < 1e-12);
        let (narrow, _, _) = nll_loss(&[2.9], &[3.1], &[0.0], alpha);
        let (wide, _, _) = nll_loss(&[2.0], &[4.0], &[0.0], alpha);
        assert!(narrow > wide);
    }

    #[test]
    fn nll_gradient_matches_differences() {
        let (l, u, y) = (vec![0.2, -1.0], vec![0.9, 0.5], vec![0.4, 1.3]);
        let (_, dl, du) = nll_loss(&l, &u, &y, 0.2);
        let h = 1e-6;
        for k in 0..2 {
            let mut lp = l.clone();
            lp[k] += h;
            let mut lm = l.clone();
            lm[k] -= h;
            let fd = (nll_loss(&lp, &u, &y, 0.2).0 - nll_loss(&lm, &u, &y, 0.2).0) / (2.0 * h);
            assert!((fd - dl[k]).abs() < 1e-6);
            let mut up = u.clone();
            up[k] += h;
            let mut um = u.clone();
            um[k] -= h;
            let fd = (nll_loss(&l, &up, &y, 0.2).0 - nll_loss(&l, &um, &y, 0.2).0) / (2.0 * h);
            assert!((fd - du[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], 0.1, &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut st = AdamState::new(2);
        let g = [0.5, -4.0];
        adam_step(&mut p, &g, 0.1, &mut st).unwrap();
        for k in 0..2 {
            let expect = [1.0, -2.0][k] - 0.1 * g[k] / (g[k].abs() + 1e-8);
            assert!((p[k] - expect).abs() < 1e-12);
        }
        // constant gradient: every step moves by at most lr
        let mut q = vec![0.0];
        let mut st = AdamState::new(1);
        for _ in 0..50 {
            let before = q[0];
            adam_step(&mut q, &[3.0], 0.01, &mut st).unwrap();
            assert!(before - q[0] > 0.0 && before - q[0] <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient_and_batches_add() {
        let sh = shape(3);
        let p = LstmParams::init(sh, 0.3, 5);
        let n = Normalization::identity(&sh);
        let c = forward(&p, &n, &window(&sh, 1.0)).unwrap();
        let k = sh.outputs();
        let g0 = backward(&p, &c, &vec![0.0; k], &vec![0.0; k]).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        let up: Vec<f64> = (0..k).map(|i| i as f64 * 0.1 - 0.3).collect();
        let g1 = backward(&p, &c, &up, &up).unwrap();
        let g2: Vec<f64> = g1.iter().map(|v| v + v).collect();
        let twice: Vec<f64> = up.iter().map(|v| 2.0 * v).collect();
        let gd = backward(&p, &c, &twice, &twice).unwrap();
        for (a, b) in g2.iter().zip(&gd) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let other = LstmParams::init(shape(2), 0.3, 5);
        assert_eq!(backward(&other, &c, &up, &up), Err(PredictorError::CacheMismatch));
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let sh = shape(3);
        let f = Forecaster { params: LstmParams::init(sh, 0.1, 9), norm: Normalization::identity(&sh), alpha: 0.1 };
        let c = Checkpoint::new(f);
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(back
            .forecaster
            .params
            .data
            .iter()
            .zip(&c.forecaster.params.data)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
