//! Neural-network building blocks on top of the autodiff tape: parameter
//! storage, Xavier initialization, linear/layer-norm/batch-norm/LSTM/dropout
//! helpers and adjacency utilities shared by all models.

use indexmap::IndexMap;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Rounds through f32 so the in-memory value always matches its checkpoint
/// representation exactly.
#[inline]
pub fn snap_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn snap_array(a: &mut Array2<f64>) {
    a.mapv_inplace(snap_f32);
}

/// Named parameter tensors (trainable) and buffers (running statistics).
///
/// Iteration order is insertion order, which doubles as the checkpoint
/// manifest order. All stored values are kept f32-representable.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Array2<f64>>,
    buffers: IndexMap<String, Array2<f64>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: &str, mut value: Array2<f64>) {
        snap_array(&mut value);
        assert!(
            self.params.insert(name.to_string(), value).is_none(),
            "duplicate parameter `{name}`"
        );
    }

    pub fn insert_buffer(&mut self, name: &str, mut value: Array2<f64>) {
        snap_array(&mut value);
        assert!(
            self.buffers.insert(name.to_string(), value).is_none(),
            "duplicate buffer `{name}`"
        );
    }

    pub fn param(&self, name: &str) -> &Array2<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn buffer(&self, name: &str) -> &Array2<f64> {
        self.buffers
            .get(name)
            .unwrap_or_else(|| panic!("unknown buffer `{name}`"))
    }

    pub fn buffer_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.buffers
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown buffer `{name}`"))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.buffers.iter()
    }

    pub fn set_param(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.dim() != value.dim() {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{name}`: have {:?}, got {:?}",
                slot.dim(),
                value.dim()
            )));
        }
        let mut value = value;
        snap_array(&mut value);
        *slot = value;
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.dim() != value.dim() {
            return Err(Error::ShapeMismatch(format!(
                "buffer `{name}`: have {:?}, got {:?}",
                slot.dim(),
                value.dim()
            )));
        }
        let mut value = value;
        snap_array(&mut value);
        *slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }
}

/// Xavier (Glorot) uniform initialization with explicit fan-in/fan-out.
pub fn xavier_uniform(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    fan_in: usize,
    fan_out: usize,
) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Tape-side handles to every parameter of a store, bound once per forward.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, store: &ParameterStore) -> Self {
        let mut vars = IndexMap::new();
        for (name, value) in store.params() {
            vars.insert(name.clone(), tape.param(value.clone()));
        }
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Accumulates `scale * grad` for every bound parameter into `acc`.
    pub fn accumulate_grads(
        &self,
        grads: &[Option<Array2<f64>>],
        store: &ParameterStore,
        acc: &mut IndexMap<String, Array2<f64>>,
        scale: f64,
    ) {
        for (name, var) in &self.vars {
            let shape = store.param(name).dim();
            let slot = acc
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(shape));
            if let Some(g) = &grads[var.index()] {
                slot.scaled_add(scale, g);
            }
        }
    }
}

/// Whether a forward pass is a training step (with RNG for dropout) or
/// deterministic inference.
pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// `x W + b` with a row-broadcast bias.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row_vec(y, b)
}

/// Per-row layer normalization with learnable scale and shift.
pub fn layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
    let mean = tape.mean_cols(x);
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_col_vec(x, neg_mean);
    let sq = tape.pow_const(centered, 2.0);
    let var = tape.mean_cols(sq);
    let var_eps = tape.add_scalar(var, eps);
    let istd = tape.pow_const(var_eps, -0.5);
    let normed = tape.mul_col_vec(centered, istd);
    let scaled = tape.mul_row_vec(normed, gamma);
    tape.add_row_vec(scaled, beta)
}

/// Inverted dropout: identity in eval mode or when `p == 0`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode) -> Var {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 - p;
            let dim = tape.value(x).dim();
            let mask = Array2::from_shape_fn(dim, |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            tape.mul_mask(x, &mask)
        }
        _ => x,
    }
}

/// Batch-norm parameters and running statistics registered under `prefix`.
pub fn register_batch_norm(store: &mut ParameterStore, prefix: &str, channels: usize) {
    store.insert_param(&format!("{prefix}.gamma"), Array2::ones((channels, 1)));
    store.insert_param(&format!("{prefix}.beta"), Array2::zeros((channels, 1)));
    store.insert_buffer(&format!("{prefix}.running_mean"), Array2::zeros((channels, 1)));
    store.insert_buffer(&format!("{prefix}.running_var"), Array2::ones((channels, 1)));
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Deferred running-statistics writes produced by training-mode batch norm;
/// the caller applies them to the store once the tape is complete.
pub type BufferUpdates = Vec<(String, Array2<f64>)>;

/// Applies deferred buffer updates in order.
pub fn apply_buffer_updates(store: &mut ParameterStore, updates: BufferUpdates) -> Result<()> {
    for (name, value) in updates {
        store.set_buffer(&name, value)?;
    }
    Ok(())
}

/// Batch normalization over channel `row % channels`.
///
/// Training mode normalizes with batch statistics and queues running
/// mean/variance updates into `updates`; eval mode applies the stored running
/// statistics and leaves `updates` untouched.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    bound: &BoundParams,
    store: &ParameterStore,
    prefix: &str,
    channels: usize,
    mode: &Mode,
    updates: &mut BufferUpdates,
) -> Var {
    let gamma = bound.var(&format!("{prefix}.gamma"));
    let beta = bound.var(&format!("{prefix}.beta"));
    let rm_name = format!("{prefix}.running_mean");
    let rv_name = format!("{prefix}.running_var");
    if mode.is_training() {
        let (y, mean, var) = tape.batch_norm(x, gamma, beta, channels, BATCH_NORM_EPS);
        let mut rm = store.buffer(&rm_name).clone();
        for (c, m) in mean.iter().enumerate() {
            rm[[c, 0]] = snap_f32((1.0 - BATCH_NORM_MOMENTUM) * rm[[c, 0]] + BATCH_NORM_MOMENTUM * m);
        }
        let mut rv = store.buffer(&rv_name).clone();
        for (c, v) in var.iter().enumerate() {
            rv[[c, 0]] = snap_f32((1.0 - BATCH_NORM_MOMENTUM) * rv[[c, 0]] + BATCH_NORM_MOMENTUM * v);
        }
        updates.push((rm_name, rm));
        updates.push((rv_name, rv));
        y
    } else {
        let rm = store.buffer(&rm_name);
        let rv = store.buffer(&rv_name);
        let neg_mean = tape.constant(rm.mapv(|v| -v));
        let istd = tape.constant(rv.mapv(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()));
        let centered = tape.add_channel_vec(x, neg_mean, channels);
        let normed = tape.mul_channel_vec(centered, istd, channels);
        let scaled = tape.mul_channel_vec(normed, gamma, channels);
        tape.add_channel_vec(scaled, beta, channels)
    }
}

/// Negative log-likelihood of `target` under row-softmaxed `(1, C)` logits.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, target: usize) -> Var {
    let classes = tape.value(logits).ncols();
    assert!(target < classes);
    let log_probs = tape.row_log_softmax(logits);
    let mut pick = Array2::zeros((1, classes));
    pick[[0, target]] = 1.0;
    let picked = tape.mul_mask(log_probs, &pick);
    let total = tape.sum_all(picked);
    tape.scale(total, -1.0)
}

/// Registers one bidirectional LSTM stack: per layer and direction, input and
/// recurrent gate weights plus a bias, gates packed `[i, f, g, o]`.
pub fn register_bilstm(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    layers: usize,
    input_dim: usize,
    hidden_half: usize,
) {
    for layer in 0..layers {
        let in_dim = if layer == 0 { input_dim } else { 2 * hidden_half };
        for dir in ["fwd", "bwd"] {
            let p = format!("{prefix}.l{layer}.{dir}");
            store.insert_param(
                &format!("{p}.w_ih"),
                xavier_uniform(rng, (in_dim, 4 * hidden_half), in_dim, 4 * hidden_half),
            );
            store.insert_param(
                &format!("{p}.w_hh"),
                xavier_uniform(
                    rng,
                    (hidden_half, 4 * hidden_half),
                    hidden_half,
                    4 * hidden_half,
                ),
            );
            store.insert_param(&format!("{p}.bias"), Array2::zeros((1, 4 * hidden_half)));
        }
    }
}

fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hidden: usize,
) -> (Var, Var) {
    let xw = tape.matmul(x, w_ih);
    let hw = tape.matmul(h, w_hh);
    let pre = tape.add(xw, hw);
    let pre = tape.add_row_vec(pre, bias);
    let i = tape.slice_cols(pre, 0, hidden);
    let f = tape.slice_cols(pre, hidden, hidden);
    let g = tape.slice_cols(pre, 2 * hidden, hidden);
    let o = tape.slice_cols(pre, 3 * hidden, hidden);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc);
    (h_new, c_new)
}

/// Runs the registered bidirectional LSTM stack over a sequence of
/// `(n, in_dim)` steps; each output step is `(n, 2 * hidden_half)`.
pub fn bilstm_sequence(
    tape: &mut Tape,
    inputs: &[Var],
    bound: &BoundParams,
    prefix: &str,
    layers: usize,
    hidden_half: usize,
) -> Vec<Var> {
    let n = tape.value(inputs[0]).nrows();
    let mut sequence: Vec<Var> = inputs.to_vec();
    for layer in 0..layers {
        let mut fwd = Vec::with_capacity(sequence.len());
        let mut bwd = vec![Var::default(); sequence.len()];
        for dir in ["fwd", "bwd"] {
            let p = format!("{prefix}.l{layer}.{dir}");
            let w_ih = bound.var(&format!("{p}.w_ih"));
            let w_hh = bound.var(&format!("{p}.w_hh"));
            let bias = bound.var(&format!("{p}.bias"));
            let mut h = tape.constant(Array2::zeros((n, hidden_half)));
            let mut c = tape.constant(Array2::zeros((n, hidden_half)));
            let steps: Vec<usize> = if dir == "fwd" {
                (0..sequence.len()).collect()
            } else {
                (0..sequence.len()).rev().collect()
            };
            for t in steps {
                let (h_new, c_new) =
                    lstm_cell(tape, sequence[t], h, c, w_ih, w_hh, bias, hidden_half);
                h = h_new;
                c = c_new;
                if dir == "fwd" {
                    fwd.push(h);
                } else {
                    bwd[t] = h;
                }
            }
        }
        sequence = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat_cols(&[f, b]))
            .collect();
    }
    sequence
}

/// Zeroes adjacency entries independently with probability `p` in training
/// mode; inference leaves the matrix untouched. No rescaling is applied: the
/// result stays a binary structure matrix.
pub fn adjacency_dropout(
    a: &Array2<f64>,
    p: f64,
    mode: &mut Mode,
) -> Array2<f64> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            a.mapv(|v| if rng.gen::<f64>() < p { 0.0 } else { v })
        }
        _ => a.clone(),
    }
}

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}`; rows (and columns)
/// with zero degree stay zero.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let deg = a.sum_axis(Axis(1));
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let n = a.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * a[[i, j]] * inv_sqrt[j])
}

/// `[I, Â, Â², ..., Â^hops]` for the polynomial graph filter.
pub fn adjacency_powers(a_normalized: &Array2<f64>, hops: usize) -> Vec<Array2<f64>> {
    let n = a_normalized.nrows();
    let mut powers = Vec::with_capacity(hops + 1);
    powers.push(Array2::eye(n));
    for j in 1..=hops {
        let next = powers[j - 1].dot(a_normalized);
        powers.push(next);
    }
    powers
}

/// Restores self-loops on a (possibly dropout-thinned) adjacency matrix so
/// every node keeps at least itself as an attention neighbor.
pub fn with_self_loops(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for i in 0..out.nrows() {
        out[[i, i]] = 1.0;
    }
    out
}

/// Sinusoidal positional encoding: `(positions, dim)` with
/// `PE[pos, 2i] = sin(pos / 10000^(2i/dim))` and the cosine on odd columns.
pub fn positional_encoding(positions: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((positions, dim), |(pos, j)| {
        let i = j / 2;
        let rate = (pos as f64) / 10000f64.powf((2 * i) as f64 / dim as f64);
        if j % 2 == 0 {
            rate.sin()
        } else {
            rate.cos()
        }
    })
}
