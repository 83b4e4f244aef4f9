//! The shared network: two stacked bidirectional LSTM layers, feed-forward
//! attention pooling, two ReLU dense layers and `1 + K` sigmoid heads.
//!
//! Forward and backward passes are written out by hand. A forward pass keeps
//! every activation backward needs in a [`ForwardTrace`]; [`backward`]
//! consumes the trace and upstream gradients `dL/dŷ`, `dL/dŷᵏ` and
//! accumulates into a [`ParamGrads`] with the same layout as the parameters.
//!
//! Only the first `true_length` positions of a sequence are run through the
//! recurrent layers. The reverse direction starts at the last real token, so
//! padding never reaches a real position's state, and attention is normalized
//! over real positions only.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Comment, PAD_INDEX};
use crate::embed::EmbeddingTable;
use crate::math::{all_finite, dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, tanh};
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Glorot-uniform: entries in `±sqrt(6 / (fan_in + fan_out))`.
    fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = glorot_limit(cols, rows);
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// How per-position hidden states are reduced to one comment vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// `a_m = softmax_m(tanh(w_a · h_m))`, `h = Σ a_m h_m`.
    #[default]
    Attention,
    /// Uniform weights over real positions; used by the identity propagation
    /// model, which runs without an attention layer.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Embedding width `D` (sum of both source dimensions).
    pub embed_dim: usize,
    /// LSTM hidden size per direction; `h_m` has `2 * hidden` entries.
    pub hidden: usize,
    pub dense1: usize,
    pub dense2: usize,
    /// Number of auxiliary heads `K`.
    pub heads: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            embed_dim: 100,
            hidden: 256,
            dense1: 512,
            dense2: 512,
            heads: 9,
            dropout_rate: 0.2,
            pooling: Pooling::Attention,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.dense1 == 0 || self.dense2 == 0 {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(alloc::format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// One LSTM direction. Gate rows are stacked in the order input, forget,
/// cell, output: `w_x` is `4H x in`, `w_h` is `4H x H`, `b` has `4H` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vec<f64>,
}

impl LstmDirection {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmDirection {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        LstmDirection {
            w_x: Matrix::glorot(4 * hidden, input, rng),
            w_h: Matrix::glorot(4 * hidden, hidden, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols
    }

    pub fn input(&self) -> usize {
        self.w_x.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl LstmLayerParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams { forward: LstmDirection::zeros(input, hidden), backward: LstmDirection::zeros(input, hidden) }
    }
}

/// The attention projection, a row vector over the `2H` hidden state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl DenseParams {
    fn zeros(input: usize, output: usize) -> Self {
        DenseParams { w: Matrix::zeros(output, input), b: vec![0.0; output] }
    }

    fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        DenseParams { w: Matrix::glorot(output, input, rng), b: vec![0.0; output] }
    }
}

/// Output heads on top of the shared dense stack: `toxicity` is `1 x F2`,
/// `auxiliary` is `K x F2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub toxicity: DenseParams,
    pub auxiliary: DenseParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hyper: Hyper,
    pub lstm1: LstmLayerParams,
    pub lstm2: LstmLayerParams,
    pub attention: AttentionParams,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
    pub heads: HeadParams,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(hyper: &Hyper) -> Self {
        let h = hyper.hidden;
        ModelParams {
            hyper: hyper.clone(),
            lstm1: LstmLayerParams::zeros(hyper.embed_dim, h),
            lstm2: LstmLayerParams::zeros(2 * h, h),
            attention: AttentionParams { w: vec![0.0; 2 * h] },
            dense1: DenseParams::zeros(2 * h, hyper.dense1),
            dense2: DenseParams::zeros(hyper.dense1, hyper.dense2),
            heads: HeadParams {
                toxicity: DenseParams::zeros(hyper.dense2, 1),
                auxiliary: DenseParams::zeros(hyper.dense2, hyper.heads),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.hyper)
    }

    /// Every learnable tensor, in a fixed order.
    pub fn tensors(&self) -> [&[f64]; 21] {
        [
            &self.lstm1.forward.w_x.data,
            &self.lstm1.forward.w_h.data,
            &self.lstm1.forward.b,
            &self.lstm1.backward.w_x.data,
            &self.lstm1.backward.w_h.data,
            &self.lstm1.backward.b,
            &self.lstm2.forward.w_x.data,
            &self.lstm2.forward.w_h.data,
            &self.lstm2.forward.b,
            &self.lstm2.backward.w_x.data,
            &self.lstm2.backward.w_h.data,
            &self.lstm2.backward.b,
            &self.attention.w,
            &self.dense1.w.data,
            &self.dense1.b,
            &self.dense2.w.data,
            &self.dense2.b,
            &self.heads.toxicity.w.data,
            &self.heads.toxicity.b,
            &self.heads.auxiliary.w.data,
            &self.heads.auxiliary.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 21] {
        [
            &mut self.lstm1.forward.w_x.data,
            &mut self.lstm1.forward.w_h.data,
            &mut self.lstm1.forward.b,
            &mut self.lstm1.backward.w_x.data,
            &mut self.lstm1.backward.w_h.data,
            &mut self.lstm1.backward.b,
            &mut self.lstm2.forward.w_x.data,
            &mut self.lstm2.forward.w_h.data,
            &mut self.lstm2.forward.b,
            &mut self.lstm2.backward.w_x.data,
            &mut self.lstm2.backward.w_h.data,
            &mut self.lstm2.backward.b,
            &mut self.attention.w,
            &mut self.dense1.w.data,
            &mut self.dense1.b,
            &mut self.dense2.w.data,
            &mut self.dense2.b,
            &mut self.heads.toxicity.w.data,
            &mut self.heads.toxicity.b,
            &mut self.heads.auxiliary.w.data,
            &mut self.heads.auxiliary.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| all_finite(t))
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &ModelParams) -> Result<()> {
        for (a, b) in self.tensors().iter().zip(other.tensors().iter()) {
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch { what: "parameter tensor", expected: a.len(), found: b.len() });
            }
        }
        Ok(())
    }

    /// All entries concatenated in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::ShapeMismatch { what: "flat parameters", expected: n, found: flat.len() });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, forget-gate biases at 1.
pub fn init_params(hyper: &Hyper, seed: u64) -> Result<ModelParams> {
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hyper.hidden;
    let rng = &mut rng;
    let lstm1 = LstmLayerParams {
        forward: LstmDirection::init(hyper.embed_dim, h, rng),
        backward: LstmDirection::init(hyper.embed_dim, h, rng),
    };
    let lstm2 = LstmLayerParams {
        forward: LstmDirection::init(2 * h, h, rng),
        backward: LstmDirection::init(2 * h, h, rng),
    };
    let attention = AttentionParams { w: Matrix::glorot(1, 2 * h, rng).data };
    let dense1 = DenseParams::init(2 * h, hyper.dense1, rng);
    let dense2 = DenseParams::init(hyper.dense1, hyper.dense2, rng);
    let heads = HeadParams {
        toxicity: DenseParams::init(hyper.dense2, 1, rng),
        auxiliary: DenseParams::init(hyper.dense2, hyper.heads, rng),
    };
    Ok(ModelParams { hyper: hyper.clone(), lstm1, lstm2, attention, dense1, dense2, heads })
}

/// Per-channel spatial dropout mask: each of the `dim` embedding channels is
/// zeroed with probability `rate` for the whole sequence, survivors are
/// scaled by `1 / (1 - rate)`.
///
/// # Panics
/// If `rate` is outside `[0, 1)`.
pub fn spatial_dropout_mask(dim: usize, rate: f64, seed: u64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if rate == 0.0 {
        return vec![1.0; dim];
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Activations of one LSTM direction, indexed by sequence position.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionTrace {
    /// Activated gates `[i, f, g, o]`, `len x 4H`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Layer input, `len x in`.
    pub input: Vec<f64>,
    pub forward: DirectionTrace,
    pub backward: DirectionTrace,
    /// `[h→_m ‖ h←_m]`, `len x 2H`.
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub max_len: usize,
    pub length: usize,
    pub dropout_mask: Option<Vec<f64>>,
    pub layers: [LayerTrace; 2],
    /// `tanh(w_a · h_m)` per position; zero at padded positions.
    pub attention_logits: Vec<f64>,
    /// `a_m`, length `max_len`; zero at padded positions.
    pub attention: Vec<f64>,
    pub pooled: Vec<f64>,
    pub dense1: Vec<f64>,
    /// `h^f`.
    pub dense2: Vec<f64>,
    /// Head pre-activations, toxicity first.
    pub head_logits: Vec<f64>,
    pub toxicity: f64,
    pub auxiliary: Vec<f64>,
}

impl ForwardTrace {
    /// Top-layer hidden states `h_m` for the real positions, `len x 2H`.
    pub fn hidden_states(&self) -> &[f64] {
        &self.layers[1].output
    }
}

fn run_direction(p: &LstmDirection, input: &[f64], len: usize, reverse: bool) -> DirectionTrace {
    let h = p.hidden();
    let in_dim = p.input();
    let mut tr = DirectionTrace {
        gates: vec![0.0; len * 4 * h],
        cell: vec![0.0; len * h],
        cell_tanh: vec![0.0; len * h],
        hidden: vec![0.0; len * h],
    };
    let mut pre = vec![0.0; 4 * h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        pre.copy_from_slice(&p.b);
        matvec_acc(&p.w_x.data, in_dim, &input[t * in_dim..(t + 1) * in_dim], &mut pre);
        matvec_acc(&p.w_h.data, h, &h_prev, &mut pre);
        let gates = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let g = tanh(pre[2 * h + j]);
            let o = sigmoid(pre[3 * h + j]);
            gates[j] = i;
            gates[h + j] = f;
            gates[2 * h + j] = g;
            gates[3 * h + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = tanh(c);
            c_prev[j] = c;
            h_prev[j] = o * tc;
            tr.cell_tanh[t * h + j] = tc;
        }
        tr.cell[t * h..(t + 1) * h].copy_from_slice(&c_prev);
        tr.hidden[t * h..(t + 1) * h].copy_from_slice(&h_prev);
    }
    tr
}

fn run_layer(p: &LstmLayerParams, input: Vec<f64>, len: usize, name: &'static str) -> Result<LayerTrace> {
    let h = p.forward.hidden();
    let fwd = run_direction(&p.forward, &input, len, false);
    let bwd = run_direction(&p.backward, &input, len, true);
    let mut output = vec![0.0; len * 2 * h];
    for t in 0..len {
        output[t * 2 * h..t * 2 * h + h].copy_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
        output[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&bwd.hidden[t * h..(t + 1) * h]);
    }
    if let Some(t) = output.chunks_exact(2 * h).position(|row| !all_finite(row)) {
        return Err(Error::NonFinite { layer: name, timestep: Some(t) });
    }
    Ok(LayerTrace { input, forward: fwd, backward: bwd, output })
}

fn dense_relu(p: &DenseParams, x: &[f64]) -> Vec<f64> {
    let mut z = p.b.clone();
    matvec_acc(&p.w.data, p.w.cols, x, &mut z);
    // `f64::max` would turn NaN into 0 and hide it from the finiteness check.
    z.iter_mut().filter(|v| **v < 0.0).for_each(|v| *v = 0.0);
    z
}

fn check(layer: &'static str, xs: &[f64]) -> Result<()> {
    if all_finite(xs) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer, timestep: None })
    }
}

/// Runs the network on one sequence.
///
/// `embedded` is `M x D` row-major; only rows `0..true_length` are read.
/// `dropout_mask`, when given, scales each embedding channel (training only).
pub fn forward(
    params: &ModelParams,
    embedded: &[f64],
    true_length: usize,
    dropout_mask: Option<&[f64]>,
) -> Result<ForwardTrace> {
    let hp = &params.hyper;
    let d = hp.embed_dim;
    if !embedded.len().is_multiple_of(d) {
        return Err(Error::ShapeMismatch { what: "embedded sequence width", expected: d, found: embedded.len() });
    }
    let max_len = embedded.len() / d;
    if true_length == 0 || true_length > max_len {
        return Err(Error::InvalidArgument(alloc::format!(
            "true_length {true_length} outside [1, {max_len}]"
        )));
    }
    if let Some(mask) = dropout_mask {
        if mask.len() != d {
            return Err(Error::ShapeMismatch { what: "dropout mask", expected: d, found: mask.len() });
        }
    }
    let len = true_length;
    let h = hp.hidden;

    let mut input = embedded[..len * d].to_vec();
    if let Some(mask) = dropout_mask {
        for row in input.chunks_exact_mut(d) {
            row.iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
        }
    }
    check("embedding", &input)?;
    let l1 = run_layer(&params.lstm1, input, len, "lstm1")?;
    let l2 = run_layer(&params.lstm2, l1.output.clone(), len, "lstm2")?;

    let states = &l2.output;
    let mut logits = vec![0.0; max_len];
    let mut attention = vec![0.0; max_len];
    match hp.pooling {
        Pooling::Attention => {
            for t in 0..len {
                logits[t] = tanh(dot(&params.attention.w, &states[t * 2 * h..(t + 1) * 2 * h]));
            }
            let max = logits[..len].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for t in 0..len {
                attention[t] = libm::exp(logits[t] - max);
                z += attention[t];
            }
            attention[..len].iter_mut().for_each(|a| *a /= z);
        }
        Pooling::Mean => attention[..len].iter_mut().for_each(|a| *a = 1.0 / len as f64),
    }
    check("attention", &attention)?;
    let mut pooled = vec![0.0; 2 * h];
    for t in 0..len {
        let a = attention[t];
        for (p, s) in pooled.iter_mut().zip(&states[t * 2 * h..(t + 1) * 2 * h]) {
            *p += a * s;
        }
    }

    let dense1 = dense_relu(&params.dense1, &pooled);
    check("dense1", &dense1)?;
    let dense2 = dense_relu(&params.dense2, &dense1);
    check("dense2", &dense2)?;

    let mut head_logits = Vec::with_capacity(1 + hp.heads);
    head_logits.push(params.heads.toxicity.b[0] + dot(params.heads.toxicity.w.row(0), &dense2));
    for k in 0..hp.heads {
        head_logits.push(params.heads.auxiliary.b[k] + dot(params.heads.auxiliary.w.row(k), &dense2));
    }
    check("heads", &head_logits)?;
    let toxicity = sigmoid(head_logits[0]);
    let auxiliary = head_logits[1..].iter().map(|&z| sigmoid(z)).collect();

    Ok(ForwardTrace {
        max_len,
        length: len,
        dropout_mask: dropout_mask.map(<[f64]>::to_vec),
        layers: [l1, l2],
        attention_logits: logits,
        attention,
        pooled,
        dense1,
        dense2,
        head_logits,
        toxicity,
        auxiliary,
    })
}

/// Upstream gradients `dL/dŷ` and `dL/dŷᵏ` for one example.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HeadGrads {
    pub toxicity: f64,
    pub auxiliary: Vec<f64>,
}

/// Backpropagates through one direction. `d_hidden` is the gradient arriving
/// at each position's hidden state (`len x H`); `d_input`, when given,
/// receives the gradient w.r.t. the layer input (`len x in`).
fn backprop_direction(
    p: &LstmDirection,
    g: &mut LstmDirection,
    tr: &DirectionTrace,
    input: &[f64],
    len: usize,
    reverse: bool,
    d_hidden: &[f64],
    mut d_input: Option<&mut [f64]>,
) {
    let h = p.hidden();
    let in_dim = p.input();
    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for step in (0..len).rev() {
        let t = if reverse { len - 1 - step } else { step };
        let prev = match (step, reverse) {
            (0, _) => None,
            (_, true) => Some(t + 1),
            (_, false) => Some(t - 1),
        };
        let (h_prev, c_prev) = match prev {
            Some(s) => (&tr.hidden[s * h..(s + 1) * h], &tr.cell[s * h..(s + 1) * h]),
            None => (&zeros[..], &zeros[..]),
        };
        let gates = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = tr.cell_tanh[t * h + j];
            let dh = d_hidden[t * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[j] = dc * gg * i * (1.0 - i);
            da[h + j] = dc * c_prev[j] * f * (1.0 - f);
            da[2 * h + j] = dc * i * (1.0 - gg * gg);
            da[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        g.b.iter_mut().zip(&da).for_each(|(b, d)| *b += d);
        let x = &input[t * in_dim..(t + 1) * in_dim];
        outer_acc(&mut g.w_x.data, in_dim, &da, x);
        outer_acc(&mut g.w_h.data, h, &da, h_prev);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&p.w_h.data, h, &da, &mut dh_next);
        if let Some(dx) = d_input.as_deref_mut() {
            matvec_t_acc(&p.w_x.data, in_dim, &da, &mut dx[t * in_dim..(t + 1) * in_dim]);
        }
    }
}

fn backprop_layer(
    p: &LstmLayerParams,
    g: &mut LstmLayerParams,
    tr: &LayerTrace,
    len: usize,
    d_output: &[f64],
    d_input: Option<&mut [f64]>,
) {
    let h = p.forward.hidden();
    let mut d_fwd = vec![0.0; len * h];
    let mut d_bwd = vec![0.0; len * h];
    for t in 0..len {
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&d_output[t * 2 * h..t * 2 * h + h]);
        d_bwd[t * h..(t + 1) * h].copy_from_slice(&d_output[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    match d_input {
        Some(dx) => {
            backprop_direction(&p.forward, &mut g.forward, &tr.forward, &tr.input, len, false, &d_fwd, Some(&mut *dx));
            backprop_direction(&p.backward, &mut g.backward, &tr.backward, &tr.input, len, true, &d_bwd, Some(dx));
        }
        None => {
            backprop_direction(&p.forward, &mut g.forward, &tr.forward, &tr.input, len, false, &d_fwd, None);
            backprop_direction(&p.backward, &mut g.backward, &tr.backward, &tr.input, len, true, &d_bwd, None);
        }
    }
}

fn backprop_dense(p: &DenseParams, g: &mut DenseParams, input: &[f64], output: &[f64], d_out: &[f64]) -> Vec<f64> {
    let dz: Vec<f64> = d_out.iter().zip(output).map(|(d, &o)| if o > 0.0 { *d } else { 0.0 }).collect();
    g.b.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
    outer_acc(&mut g.w.data, p.w.cols, &dz, input);
    let mut d_in = vec![0.0; p.w.cols];
    matvec_t_acc(&p.w.data, p.w.cols, &dz, &mut d_in);
    d_in
}

/// Accumulates the gradient of the loss w.r.t. every parameter into `grads`.
/// The embedding table is frozen and receives nothing.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_outputs: &HeadGrads,
    grads: &mut ParamGrads,
) -> Result<()> {
    let hp = &params.hyper;
    if grad_outputs.auxiliary.len() != hp.heads {
        return Err(Error::ShapeMismatch { what: "auxiliary head gradients", expected: hp.heads, found: grad_outputs.auxiliary.len() });
    }
    if trace.auxiliary.len() != hp.heads || trace.pooled.len() != 2 * hp.hidden || trace.dense2.len() != hp.dense2 {
        return Err(Error::ShapeMismatch { what: "forward trace", expected: hp.heads, found: trace.auxiliary.len() });
    }
    params.check_same_shape(grads)?;
    let h = hp.hidden;
    let len = trace.length;

    // Heads: dL/dz = dL/dŷ · σ'(z).
    let mut d_hf = vec![0.0; hp.dense2];
    let dz_tox = grad_outputs.toxicity * trace.toxicity * (1.0 - trace.toxicity);
    grads.heads.toxicity.b[0] += dz_tox;
    outer_acc(&mut grads.heads.toxicity.w.data, hp.dense2, &[dz_tox], &trace.dense2);
    matvec_t_acc(&params.heads.toxicity.w.data, hp.dense2, &[dz_tox], &mut d_hf);
    let dz_aux: Vec<f64> = grad_outputs
        .auxiliary
        .iter()
        .zip(&trace.auxiliary)
        .map(|(g, y)| g * y * (1.0 - y))
        .collect();
    grads.heads.auxiliary.b.iter_mut().zip(&dz_aux).for_each(|(b, d)| *b += d);
    outer_acc(&mut grads.heads.auxiliary.w.data, hp.dense2, &dz_aux, &trace.dense2);
    matvec_t_acc(&params.heads.auxiliary.w.data, hp.dense2, &dz_aux, &mut d_hf);

    let d_d1 = backprop_dense(&params.dense2, &mut grads.dense2, &trace.dense1, &trace.dense2, &d_hf);
    let d_pooled = backprop_dense(&params.dense1, &mut grads.dense1, &trace.pooled, &trace.dense1, &d_d1);

    let states = trace.hidden_states();
    let mut d_states = vec![0.0; len * 2 * h];
    for t in 0..len {
        let a = trace.attention[t];
        d_states[t * 2 * h..(t + 1) * 2 * h].iter_mut().zip(&d_pooled).for_each(|(d, p)| *d = a * p);
    }
    if hp.pooling == Pooling::Attention {
        // softmax over e_t = tanh(u_t), u_t = w · h_t
        let da: Vec<f64> = (0..len).map(|t| dot(&d_pooled, &states[t * 2 * h..(t + 1) * 2 * h])).collect();
        let mean: f64 = (0..len).map(|t| trace.attention[t] * da[t]).sum();
        for t in 0..len {
            let e = trace.attention_logits[t];
            let du = trace.attention[t] * (da[t] - mean) * (1.0 - e * e);
            let h_t = &states[t * 2 * h..(t + 1) * 2 * h];
            grads.attention.w.iter_mut().zip(h_t).for_each(|(g, x)| *g += du * x);
            d_states[t * 2 * h..(t + 1) * 2 * h]
                .iter_mut()
                .zip(&params.attention.w)
                .for_each(|(d, w)| *d += du * w);
        }
    }

    let mut d_l1 = vec![0.0; len * 2 * h];
    backprop_layer(&params.lstm2, &mut grads.lstm2, &trace.layers[1], len, &d_states, Some(&mut d_l1));
    backprop_layer(&params.lstm1, &mut grads.lstm1, &trace.layers[0], len, &d_l1, None);
    Ok(())
}

/// Gradient of the loss w.r.t. every parameter for one example.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, grad_outputs: &HeadGrads) -> Result<ParamGrads> {
    let mut grads = params.zeros_like();
    backward_into(params, trace, grad_outputs, &mut grads)?;
    Ok(grads)
}

/// Head outputs for one comment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub toxicity: f64,
    pub auxiliary: Vec<f64>,
}

/// Embeds the unpadded prefix of an encoded sequence. An empty comment becomes
/// a single padding step, whatever id sits in the first slot.
pub fn embed_sequence(table: &EmbeddingTable, token_ids: &[u32], true_length: usize) -> Result<(Vec<f64>, usize)> {
    if true_length > token_ids.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "true length {true_length} exceeds the {} encoded positions",
            token_ids.len()
        )));
    }
    if true_length == 0 {
        return Ok((table.lookup(&[PAD_INDEX])?, 1));
    }
    Ok((table.lookup(&token_ids[..true_length])?, true_length))
}

/// Inference on one encoded sequence (no dropout).
pub fn predict_one(params: &ModelParams, table: &EmbeddingTable, token_ids: &[u32], true_length: usize) -> Result<Prediction> {
    let (embedded, len) = embed_sequence(table, token_ids, true_length)?;
    let tr = forward(params, &embedded, len, None)?;
    Ok(Prediction { toxicity: tr.toxicity, auxiliary: tr.auxiliary })
}

/// Scores a batch in order, one forward pass per comment.
pub fn predict(params: &ModelParams, table: &EmbeddingTable, batch: &[Comment]) -> Result<Vec<Prediction>> {
    batch
        .iter()
        .map(|c| predict_one(params, table, &c.token_ids, c.true_length))
        .collect()
}

/// A trained network with its frozen embedding table and the checksum of the
/// vocabulary its token ids refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub embedding: EmbeddingTable,
    pub vocab_checksum: u64,
}

impl Model {
    pub fn predict(&self, batch: &[Comment]) -> Result<Vec<Prediction>> {
        predict(&self.params, &self.embedding, batch)
    }
}

impl crate::templates::ToxicityScorer for Model {
    fn vocab_checksum(&self) -> u64 {
        self.vocab_checksum
    }

    fn score(&self, token_ids: &[u32], true_length: usize) -> Result<f64> {
        predict_one(&self.params, &self.embedding, token_ids, true_length).map(|p| p.toxicity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Hyper {
        Hyper { embed_dim: 2, hidden: 2, dense1: 2, dense2: 2, heads: 1, dropout_rate: 0.0, pooling: Pooling::Attention }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let hp = Hyper { embed_dim: 6, hidden: 3, dense1: 5, dense2: 4, heads: 2, ..Hyper::default() };
        let a = init_params(&hp, 1).unwrap();
        assert_eq!(a, init_params(&hp, 1).unwrap());
        assert_ne!(a, init_params(&hp, 2).unwrap());
        let lim = glorot_limit(6, 12);
        assert!(a.lstm1.forward.w_x.data.iter().all(|x| x.abs() <= lim));
        for dir in [&a.lstm1.forward, &a.lstm1.backward, &a.lstm2.forward, &a.lstm2.backward] {
            assert!(dir.b[3..6].iter().all(|&b| b == 1.0));
            assert!(dir.b[..3].iter().chain(&dir.b[6..]).all(|&b| b == 0.0));
        }
        assert!(a.dense1.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dropout_mask_properties() {
        assert_eq!(spatial_dropout_mask(5, 0.0, 3), vec![1.0; 5]);
        let m = spatial_dropout_mask(10_000, 0.2, 9);
        assert_eq!(m, spatial_dropout_mask(10_000, 0.2, 9));
        let dropped = m.iter().filter(|&&x| x == 0.0).count() as f64 / 10_000.0;
        // 0.02 is 5 binomial standard deviations at n = 10^4.
        assert!((dropped - 0.2).abs() < 0.02, "{dropped}");
        assert!(m.iter().all(|&x| x == 0.0 || x == 1.25));
    }

    #[test]
    fn single_position_attends_fully() {
        let p = init_params(&tiny(), 4).unwrap();
        let tr = forward(&p, &[0.3, -0.2, 9.0, 9.0], 1, None).unwrap();
        assert_eq!(tr.attention, vec![1.0, 0.0]);
        assert_eq!(tr.pooled, tr.hidden_states()[..4].to_vec());
    }

    #[test]
    fn equal_logits_give_uniform_attention() {
        let mut p = init_params(&tiny(), 5).unwrap();
        p.attention.w.iter_mut().for_each(|x| *x = 0.0);
        let tr = forward(&p, &[0.5, 0.1, 0.5, 0.1, 0.5, 0.1], 3, None).unwrap();
        for &a in &tr.attention {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = init_params(&tiny(), 5).unwrap();
        assert!(forward(&p, &[0.0; 6], 0, None).is_err());
        assert!(forward(&p, &[0.0; 6], 4, None).is_err());
        assert!(forward(&p, &[0.0; 5], 1, None).is_err());
        assert!(forward(&p, &[0.0; 6], 2, Some(&[1.0])).is_err());
        let mut bad = p.clone();
        bad.dense1.b[0] = f64::NAN;
        assert_eq!(
            forward(&bad, &[0.0; 6], 2, None).unwrap_err(),
            Error::NonFinite { layer: "dense1", timestep: None }
        );
        let mut bad = p;
        bad.lstm1.forward.b[0] = f64::NAN;
        assert!(matches!(forward(&bad, &[0.0; 6], 2, None), Err(Error::NonFinite { layer: "lstm1", .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = init_params(&tiny(), 6).unwrap();
        let tr = forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.0, 0.0], 2, None).unwrap();
        let g = backward(&p, &tr, &HeadGrads { toxicity: 0.0, auxiliary: vec![0.0] }).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
        assert!(backward(&p, &tr, &HeadGrads { toxicity: 1.0, auxiliary: vec![] }).is_err());
    }

    #[test]
    fn grads_are_linear_in_upstream() {
        let p = init_params(&tiny(), 7).unwrap();
        let tr = forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.5, -0.6], 3, None).unwrap();
        let g1 = backward(&p, &tr, &HeadGrads { toxicity: 0.7, auxiliary: vec![-0.3] }).unwrap();
        let g2 = backward(&p, &tr, &HeadGrads { toxicity: 1.4, auxiliary: vec![-0.6] }).unwrap();
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&tiny(), 8).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[1.0]).is_err());
    }
}
