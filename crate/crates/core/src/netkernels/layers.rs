//! Layer parameters and the forward/backward maps for each layer kind.
//!
//! All layers are batch-first. Shapes:
//!
//! | kind      | input        | output        | tensors                                         |
//! |-----------|--------------|---------------|-------------------------------------------------|
//! | Dense     | `[B, in]`    | `[B, out]`    | weight `[out, in]`, bias `[out]`                |
//! | LstmCell  | `[B, in]`    | `[B, H]`      | w_input `[4H, in]`, w_hidden `[4H, H]`, bias `[4H]` |
//! | GruCell   | `[B, in]`    | `[B, H]`      | w_input `[3H, in]`, w_hidden `[3H, H]`, b_input `[3H]`, b_hidden `[3H]` |
//! | Conv1d    | `[B, T, in]` | `[B, T, out]` | weight `[out, K, in]`, bias `[out]`             |
//! | GlobalPool| `[B, T, C]`  | `[B, C]`      | none                                            |
//!
//! LSTM gate order is input, forget, candidate, output. GRU gate order is
//! reset, update, new; the reset gate multiplies the hidden projection
//! including its bias. Conv1d uses zero "same" padding with `(K-1)/2`
//! columns on the left.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense {
        activation: Activation,
    },
    LstmCell,
    GruCell,
    Conv1d {
        kernel: usize,
        activation: Activation,
    },
    GlobalPool,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::LstmCell => "lstm",
            LayerKind::GruCell => "gru",
            LayerKind::Conv1d { .. } => "conv1d",
            LayerKind::GlobalPool => "global_pool",
        }
    }
}

/// Parameters of one layer. `tensors` follows the per-kind order in the
/// module table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub tensors: Vec<Tensor>,
    /// Bumped on every parameter update; caches remember the version they
    /// were built against.
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for LayerParams {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.tensors == other.tensors
    }
}

/// Accumulated partial derivatives, congruent with a [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(p: &LayerParams) -> Self {
        Gradients {
            tensors: p.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

impl LayerParams {
    fn with_tensors(kind: LayerKind, tensors: Vec<Tensor>) -> Self {
        LayerParams {
            kind,
            tensors,
            version: fresh_version(),
        }
    }

    /// Uniform init in `±gain/sqrt(fan_in)`.
    pub fn dense<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain / (input as f64).sqrt();
        Self::with_tensors(
            LayerKind::Dense { activation },
            vec![
                Tensor::uniform(&[output, input], bound, rng),
                Tensor::uniform(&[output], bound, rng),
            ],
        )
    }

    pub fn lstm<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self::with_tensors(
            LayerKind::LstmCell,
            vec![
                Tensor::uniform(&[4 * hidden, input], bound, rng),
                Tensor::uniform(&[4 * hidden, hidden], bound, rng),
                Tensor::uniform(&[4 * hidden], bound, rng),
            ],
        )
    }

    pub fn gru<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self::with_tensors(
            LayerKind::GruCell,
            vec![
                Tensor::uniform(&[3 * hidden, input], bound, rng),
                Tensor::uniform(&[3 * hidden, hidden], bound, rng),
                Tensor::uniform(&[3 * hidden], bound, rng),
                Tensor::uniform(&[3 * hidden], bound, rng),
            ],
        )
    }

    pub fn conv1d<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Self::with_tensors(
            LayerKind::Conv1d { kernel, activation },
            vec![
                Tensor::uniform(&[output, kernel, input], bound, rng),
                Tensor::uniform(&[output], bound, rng),
            ],
        )
    }

    pub fn global_pool() -> Self {
        Self::with_tensors(LayerKind::GlobalPool, Vec::new())
    }

    /// Builds a layer from explicit tensors, validating their shapes.
    pub fn from_tensors(kind: LayerKind, tensors: Vec<Tensor>) -> Result<Self> {
        let p = Self::with_tensors(kind, tensors);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tensors;
        let bad = |msg: String| Err(Error::Shape(format!("{}: {msg}", self.kind.name())));
        let want = match self.kind {
            LayerKind::Dense { .. } | LayerKind::Conv1d { .. } => 2,
            LayerKind::LstmCell => 3,
            LayerKind::GruCell => 4,
            LayerKind::GlobalPool => 0,
        };
        if t.len() != want {
            return bad(format!("expected {want} tensors, got {}", t.len()));
        }
        match self.kind {
            LayerKind::Dense { .. } => {
                if t[0].rank() != 2 || t[1].shape() != [t[0].dim(0)] {
                    return bad(format!("weight {:?} bias {:?}", t[0].shape(), t[1].shape()));
                }
            }
            LayerKind::Conv1d { kernel, .. } => {
                if t[0].rank() != 3 || t[0].dim(1) != kernel || t[1].shape() != [t[0].dim(0)] {
                    return bad(format!("weight {:?} bias {:?}", t[0].shape(), t[1].shape()));
                }
            }
            LayerKind::LstmCell | LayerKind::GruCell => {
                let gates = if self.kind == LayerKind::LstmCell {
                    4
                } else {
                    3
                };
                let rows = t[0].dim(0);
                if !rows.is_multiple_of(gates) {
                    return bad(format!("gate rows {rows} not divisible by {gates}"));
                }
                let h = rows / gates;
                if t[1].shape() != [rows, h] || t[2].shape() != [rows] {
                    return bad("hidden/bias shapes inconsistent".into());
                }
                if gates == 3 && t[3].shape() != [rows] {
                    return bad("hidden bias shape inconsistent".into());
                }
            }
            LayerKind::GlobalPool => {}
        }
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn touch(&mut self) {
        self.version = fresh_version();
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Hidden width of a recurrent cell.
    pub fn hidden_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::LstmCell => Some(self.tensors[0].dim(0) / 4),
            LayerKind::GruCell => Some(self.tensors[0].dim(0) / 3),
            _ => None,
        }
    }

    /// Width of the last input axis this layer expects, if it has one.
    pub fn input_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Dense { .. } | LayerKind::LstmCell | LayerKind::GruCell => {
                Some(self.tensors[0].dim(1))
            }
            LayerKind::Conv1d { .. } => Some(self.tensors[0].dim(2)),
            LayerKind::GlobalPool => None,
        }
    }

    pub fn output_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Dense { .. } | LayerKind::Conv1d { .. } => Some(self.tensors[0].dim(0)),
            LayerKind::LstmCell | LayerKind::GruCell => self.hidden_size(),
            LayerKind::GlobalPool => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecurrentState {
    Hidden(Tensor),
    HiddenCell { h: Tensor, c: Tensor },
}

/// Values saved by a forward call for the matching backward call.
#[derive(Clone, Debug)]
pub struct Cache {
    kind: LayerKind,
    version: u64,
    input: Tensor,
    data: CacheData,
}

#[derive(Clone, Debug)]
enum CacheData {
    Dense {
        output: Tensor,
    },
    Lstm {
        h_prev: Tensor,
        c_prev: Tensor,
        /// Post-nonlinearity gates `[B, 4H]`.
        gates: Tensor,
        tanh_c: Tensor,
    },
    Gru {
        h_prev: Tensor,
        /// Post-nonlinearity `r`, `z`, `n` as `[B, 3H]`.
        gates: Tensor,
        /// Hidden projection of the new-gate, `W_hn h + b_hn`, `[B, H]`.
        hidden_new: Tensor,
    },
    Conv {
        cols: Vec<f64>,
        output: Tensor,
    },
    Pool,
}

pub struct Forward {
    pub output: Tensor,
    pub state: Option<RecurrentState>,
    pub cache: Cache,
}

pub struct Backward {
    pub grads: Gradients,
    pub input_grad: Tensor,
    pub state_grad: Option<RecurrentState>,
}

fn add_bias_rows(out: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn sum_rows_into(dst: &mut [f64], src: &[f64]) {
    let n = dst.len();
    for row in src.chunks(n) {
        for (d, s) in dst.iter_mut().zip(row) {
            *d += s;
        }
    }
}

fn zero_state(batch: usize, hidden: usize, with_cell: bool) -> RecurrentState {
    if with_cell {
        RecurrentState::HiddenCell {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    } else {
        RecurrentState::Hidden(Tensor::zeros(&[batch, hidden]))
    }
}

/// Runs one layer (one time step for recurrent cells).
pub fn layer_forward(
    p: &LayerParams,
    input: &Tensor,
    state: Option<&RecurrentState>,
) -> Result<Forward> {
    let shape_err = |what: &str| {
        Error::Shape(format!(
            "{} input {:?}: {what}",
            p.kind.name(),
            input.shape()
        ))
    };
    let (output, new_state, data) = match p.kind {
        LayerKind::Dense { activation } => {
            let (w, b) = (&p.tensors[0], &p.tensors[1]);
            let (out_dim, in_dim) = (w.dim(0), w.dim(1));
            if input.rank() != 2 || input.dim(1) != in_dim {
                return Err(shape_err(&format!("expected [B, {in_dim}]")));
            }
            let batch = input.dim(0);
            let mut out = vec![0.0; batch * out_dim];
            gemm(
                batch,
                in_dim,
                out_dim,
                input.data(),
                false,
                w.data(),
                true,
                0.0,
                &mut out,
            );
            add_bias_rows(&mut out, b.data());
            out.iter_mut().for_each(|x| *x = activation.apply(*x));
            let output = Tensor::from_vec(&[batch, out_dim], out)?;
            (output.clone(), None, CacheData::Dense { output })
        }
        LayerKind::LstmCell => {
            let (wi, wh, b) = (&p.tensors[0], &p.tensors[1], &p.tensors[2]);
            let h4 = wi.dim(0);
            let hidden = h4 / 4;
            let in_dim = wi.dim(1);
            if input.rank() != 2 || input.dim(1) != in_dim {
                return Err(shape_err(&format!("expected [B, {in_dim}]")));
            }
            let batch = input.dim(0);
            let owned;
            let (h_prev, c_prev) = match state {
                Some(RecurrentState::HiddenCell { h, c }) => (h, c),
                Some(RecurrentState::Hidden(_)) => {
                    return Err(Error::Shape("lstm state needs hidden and cell".into()))
                }
                None => {
                    owned = zero_state(batch, hidden, true);
                    match &owned {
                        RecurrentState::HiddenCell { h, c } => (h, c),
                        _ => unreachable!(),
                    }
                }
            };
            h_prev.expect_shape(&[batch, hidden], "lstm hidden state")?;
            c_prev.expect_shape(&[batch, hidden], "lstm cell state")?;
            let mut a = vec![0.0; batch * h4];
            gemm(
                batch,
                in_dim,
                h4,
                input.data(),
                false,
                wi.data(),
                true,
                0.0,
                &mut a,
            );
            gemm(
                batch,
                hidden,
                h4,
                h_prev.data(),
                false,
                wh.data(),
                true,
                1.0,
                &mut a,
            );
            add_bias_rows(&mut a, b.data());
            let mut c_new = vec![0.0; batch * hidden];
            let mut h_new = vec![0.0; batch * hidden];
            let mut tanh_c = vec![0.0; batch * hidden];
            for bi in 0..batch {
                let row = &mut a[bi * h4..(bi + 1) * h4];
                for j in 0..hidden {
                    let i_g = sigmoid(row[j]);
                    let f_g = sigmoid(row[hidden + j]);
                    let g_g = row[2 * hidden + j].tanh();
                    let o_g = sigmoid(row[3 * hidden + j]);
                    row[j] = i_g;
                    row[hidden + j] = f_g;
                    row[2 * hidden + j] = g_g;
                    row[3 * hidden + j] = o_g;
                    let k = bi * hidden + j;
                    let c = f_g * c_prev.data()[k] + i_g * g_g;
                    let tc = c.tanh();
                    c_new[k] = c;
                    tanh_c[k] = tc;
                    h_new[k] = o_g * tc;
                }
            }
            let h = Tensor::from_vec(&[batch, hidden], h_new)?;
            let c = Tensor::from_vec(&[batch, hidden], c_new)?;
            let data = CacheData::Lstm {
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                gates: Tensor::from_vec(&[batch, h4], a)?,
                tanh_c: Tensor::from_vec(&[batch, hidden], tanh_c)?,
            };
            (h.clone(), Some(RecurrentState::HiddenCell { h, c }), data)
        }
        LayerKind::GruCell => {
            let (wi, wh, bi_, bh) = (&p.tensors[0], &p.tensors[1], &p.tensors[2], &p.tensors[3]);
            let h3 = wi.dim(0);
            let hidden = h3 / 3;
            let in_dim = wi.dim(1);
            if input.rank() != 2 || input.dim(1) != in_dim {
                return Err(shape_err(&format!("expected [B, {in_dim}]")));
            }
            let batch = input.dim(0);
            let owned;
            let h_prev = match state {
                Some(RecurrentState::Hidden(h)) => h,
                Some(RecurrentState::HiddenCell { .. }) => {
                    return Err(Error::Shape("gru state has no cell".into()))
                }
                None => {
                    owned = Tensor::zeros(&[batch, hidden]);
                    &owned
                }
            };
            h_prev.expect_shape(&[batch, hidden], "gru hidden state")?;
            let mut ai = vec![0.0; batch * h3];
            gemm(
                batch,
                in_dim,
                h3,
                input.data(),
                false,
                wi.data(),
                true,
                0.0,
                &mut ai,
            );
            add_bias_rows(&mut ai, bi_.data());
            let mut ah = vec![0.0; batch * h3];
            gemm(
                batch,
                hidden,
                h3,
                h_prev.data(),
                false,
                wh.data(),
                true,
                0.0,
                &mut ah,
            );
            add_bias_rows(&mut ah, bh.data());
            let mut gates = vec![0.0; batch * h3];
            let mut hidden_new = vec![0.0; batch * hidden];
            let mut h_new = vec![0.0; batch * hidden];
            for b in 0..batch {
                let (ri, hi) = (b * h3, b * hidden);
                for j in 0..hidden {
                    let r = sigmoid(ai[ri + j] + ah[ri + j]);
                    let z = sigmoid(ai[ri + hidden + j] + ah[ri + hidden + j]);
                    let hn = ah[ri + 2 * hidden + j];
                    let n = (ai[ri + 2 * hidden + j] + r * hn).tanh();
                    gates[ri + j] = r;
                    gates[ri + hidden + j] = z;
                    gates[ri + 2 * hidden + j] = n;
                    hidden_new[hi + j] = hn;
                    h_new[hi + j] = (1.0 - z) * n + z * h_prev.data()[hi + j];
                }
            }
            let h = Tensor::from_vec(&[batch, hidden], h_new)?;
            let data = CacheData::Gru {
                h_prev: h_prev.clone(),
                gates: Tensor::from_vec(&[batch, h3], gates)?,
                hidden_new: Tensor::from_vec(&[batch, hidden], hidden_new)?,
            };
            (h.clone(), Some(RecurrentState::Hidden(h)), data)
        }
        LayerKind::Conv1d { kernel, activation } => {
            let (w, b) = (&p.tensors[0], &p.tensors[1]);
            let (out_ch, in_ch) = (w.dim(0), w.dim(2));
            if input.rank() != 3 || input.dim(2) != in_ch {
                return Err(shape_err(&format!("expected [B, T, {in_ch}]")));
            }
            let (batch, steps) = (input.dim(0), input.dim(1));
            let cols = im2col(input.data(), batch, steps, in_ch, kernel);
            let rows = batch * steps;
            let mut out = vec![0.0; rows * out_ch];
            gemm(
                rows,
                kernel * in_ch,
                out_ch,
                &cols,
                false,
                w.data(),
                true,
                0.0,
                &mut out,
            );
            add_bias_rows(&mut out, b.data());
            out.iter_mut().for_each(|x| *x = activation.apply(*x));
            let output = Tensor::from_vec(&[batch, steps, out_ch], out)?;
            (output.clone(), None, CacheData::Conv { cols, output })
        }
        LayerKind::GlobalPool => {
            if input.rank() != 3 {
                return Err(shape_err("expected [B, T, C]"));
            }
            let (batch, steps, ch) = (input.dim(0), input.dim(1), input.dim(2));
            let mut out = vec![0.0; batch * ch];
            for b in 0..batch {
                for t in 0..steps {
                    let src = &input.data()[(b * steps + t) * ch..(b * steps + t + 1) * ch];
                    for (o, s) in out[b * ch..(b + 1) * ch].iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
            let inv = 1.0 / steps as f64;
            out.iter_mut().for_each(|x| *x *= inv);
            (Tensor::from_vec(&[batch, ch], out)?, None, CacheData::Pool)
        }
    };
    Ok(Forward {
        output,
        state: new_state,
        cache: Cache {
            kind: p.kind,
            version: p.version,
            input: input.clone(),
            data,
        },
    })
}

fn conv_pad(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// `[B*T, K*C]` patch matrix with zero "same" padding.
fn im2col(x: &[f64], batch: usize, steps: usize, ch: usize, kernel: usize) -> Vec<f64> {
    let pad = conv_pad(kernel) as isize;
    let width = kernel * ch;
    let mut cols = vec![0.0; batch * steps * width];
    for b in 0..batch {
        for t in 0..steps {
            let row = &mut cols[(b * steps + t) * width..(b * steps + t + 1) * width];
            for k in 0..kernel {
                let src_t = t as isize + k as isize - pad;
                if src_t < 0 || src_t >= steps as isize {
                    continue;
                }
                let off = (b * steps + src_t as usize) * ch;
                row[k * ch..(k + 1) * ch].copy_from_slice(&x[off..off + ch]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], batch: usize, steps: usize, ch: usize, kernel: usize) -> Vec<f64> {
    let pad = conv_pad(kernel) as isize;
    let width = kernel * ch;
    let mut dx = vec![0.0; batch * steps * ch];
    for b in 0..batch {
        for t in 0..steps {
            let row = &dcols[(b * steps + t) * width..(b * steps + t + 1) * width];
            for k in 0..kernel {
                let src_t = t as isize + k as isize - pad;
                if src_t < 0 || src_t >= steps as isize {
                    continue;
                }
                let off = (b * steps + src_t as usize) * ch;
                for (d, g) in dx[off..off + ch].iter_mut().zip(&row[k * ch..(k + 1) * ch]) {
                    *d += g;
                }
            }
        }
    }
    dx
}

/// Exact gradients of the forward map that produced `cache`.
///
/// `upstream` is the gradient with respect to the layer output. For recurrent
/// cells `state_grad` carries the gradient flowing back from later steps into
/// the state this step produced; the returned `state_grad` is the gradient
/// with respect to the incoming state.
pub fn layer_backward(
    p: &LayerParams,
    cache: &Cache,
    upstream: &Tensor,
    state_grad: Option<&RecurrentState>,
) -> Result<Backward> {
    if cache.kind != p.kind {
        return Err(Error::StaleCache(format!(
            "cache from a {} layer used with a {} layer",
            cache.kind.name(),
            p.kind.name()
        )));
    }
    if cache.version != p.version {
        return Err(Error::StaleCache(format!(
            "{} parameters changed since the forward pass",
            p.kind.name()
        )));
    }
    let x = &cache.input;
    match (&p.kind, &cache.data) {
        (LayerKind::Dense { activation }, CacheData::Dense { output }) => {
            upstream.expect_shape(output.shape(), "dense upstream")?;
            let w = &p.tensors[0];
            let (out_dim, in_dim) = (w.dim(0), w.dim(1));
            let batch = x.dim(0);
            let dpre: Vec<f64> = upstream
                .data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| g * activation.grad_from_output(*y))
                .collect();
            let mut dw = vec![0.0; out_dim * in_dim];
            gemm(
                out_dim,
                batch,
                in_dim,
                &dpre,
                true,
                x.data(),
                false,
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; out_dim];
            sum_rows_into(&mut db, &dpre);
            let mut dx = vec![0.0; batch * in_dim];
            gemm(
                batch,
                out_dim,
                in_dim,
                &dpre,
                false,
                w.data(),
                false,
                0.0,
                &mut dx,
            );
            Ok(Backward {
                grads: Gradients {
                    tensors: vec![
                        Tensor::from_vec(&[out_dim, in_dim], dw)?,
                        Tensor::from_vec(&[out_dim], db)?,
                    ],
                },
                input_grad: Tensor::from_vec(x.shape(), dx)?,
                state_grad: None,
            })
        }
        (
            LayerKind::LstmCell,
            CacheData::Lstm {
                h_prev,
                c_prev,
                gates,
                tanh_c,
            },
        ) => {
            let (wi, wh) = (&p.tensors[0], &p.tensors[1]);
            let h4 = wi.dim(0);
            let hidden = h4 / 4;
            let in_dim = wi.dim(1);
            let batch = x.dim(0);
            upstream.expect_shape(&[batch, hidden], "lstm upstream")?;
            let (dh_next, dc_next) = match state_grad {
                None => (None, None),
                Some(RecurrentState::HiddenCell { h, c }) => (Some(h), Some(c)),
                Some(RecurrentState::Hidden(_)) => {
                    return Err(Error::Shape(
                        "lstm state gradient needs hidden and cell".into(),
                    ))
                }
            };
            let mut da = vec![0.0; batch * h4];
            let mut dc_prev = vec![0.0; batch * hidden];
            let g = gates.data();
            for b in 0..batch {
                for j in 0..hidden {
                    let k = b * hidden + j;
                    let r = b * h4;
                    let (i_g, f_g, g_g, o_g) = (
                        g[r + j],
                        g[r + hidden + j],
                        g[r + 2 * hidden + j],
                        g[r + 3 * hidden + j],
                    );
                    let tc = tanh_c.data()[k];
                    let dh = upstream.data()[k] + dh_next.map_or(0.0, |t| t.data()[k]);
                    let dc = dc_next.map_or(0.0, |t| t.data()[k]) + dh * o_g * (1.0 - tc * tc);
                    da[r + j] = dc * g_g * i_g * (1.0 - i_g);
                    da[r + hidden + j] = dc * c_prev.data()[k] * f_g * (1.0 - f_g);
                    da[r + 2 * hidden + j] = dc * i_g * (1.0 - g_g * g_g);
                    da[r + 3 * hidden + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_prev[k] = dc * f_g;
                }
            }
            let mut dwi = vec![0.0; h4 * in_dim];
            gemm(h4, batch, in_dim, &da, true, x.data(), false, 0.0, &mut dwi);
            let mut dwh = vec![0.0; h4 * hidden];
            gemm(
                h4,
                batch,
                hidden,
                &da,
                true,
                h_prev.data(),
                false,
                0.0,
                &mut dwh,
            );
            let mut db = vec![0.0; h4];
            sum_rows_into(&mut db, &da);
            let mut dx = vec![0.0; batch * in_dim];
            gemm(
                batch,
                h4,
                in_dim,
                &da,
                false,
                wi.data(),
                false,
                0.0,
                &mut dx,
            );
            let mut dh_prev = vec![0.0; batch * hidden];
            gemm(
                batch,
                h4,
                hidden,
                &da,
                false,
                wh.data(),
                false,
                0.0,
                &mut dh_prev,
            );
            Ok(Backward {
                grads: Gradients {
                    tensors: vec![
                        Tensor::from_vec(&[h4, in_dim], dwi)?,
                        Tensor::from_vec(&[h4, hidden], dwh)?,
                        Tensor::from_vec(&[h4], db)?,
                    ],
                },
                input_grad: Tensor::from_vec(&[batch, in_dim], dx)?,
                state_grad: Some(RecurrentState::HiddenCell {
                    h: Tensor::from_vec(&[batch, hidden], dh_prev)?,
                    c: Tensor::from_vec(&[batch, hidden], dc_prev)?,
                }),
            })
        }
        (
            LayerKind::GruCell,
            CacheData::Gru {
                h_prev,
                gates,
                hidden_new,
            },
        ) => {
            let (wi, wh) = (&p.tensors[0], &p.tensors[1]);
            let h3 = wi.dim(0);
            let hidden = h3 / 3;
            let in_dim = wi.dim(1);
            let batch = x.dim(0);
            upstream.expect_shape(&[batch, hidden], "gru upstream")?;
            let dh_next = match state_grad {
                None => None,
                Some(RecurrentState::Hidden(h)) => Some(h),
                Some(RecurrentState::HiddenCell { .. }) => {
                    return Err(Error::Shape("gru state gradient has no cell".into()))
                }
            };
            let mut dai = vec![0.0; batch * h3];
            let mut dah = vec![0.0; batch * h3];
            let mut dh_prev = vec![0.0; batch * hidden];
            let g = gates.data();
            for b in 0..batch {
                let (ri, hi) = (b * h3, b * hidden);
                for j in 0..hidden {
                    let (r, z, n) = (g[ri + j], g[ri + hidden + j], g[ri + 2 * hidden + j]);
                    let hp = h_prev.data()[hi + j];
                    let dh = upstream.data()[hi + j] + dh_next.map_or(0.0, |t| t.data()[hi + j]);
                    let dn = dh * (1.0 - z);
                    let dz = dh * (hp - n);
                    dh_prev[hi + j] = dh * z;
                    let dan = dn * (1.0 - n * n);
                    let dr = dan * hidden_new.data()[hi + j];
                    let daz = dz * z * (1.0 - z);
                    let dar = dr * r * (1.0 - r);
                    dai[ri + j] = dar;
                    dai[ri + hidden + j] = daz;
                    dai[ri + 2 * hidden + j] = dan;
                    dah[ri + j] = dar;
                    dah[ri + hidden + j] = daz;
                    dah[ri + 2 * hidden + j] = dan * r;
                }
            }
            let mut dwi = vec![0.0; h3 * in_dim];
            gemm(
                h3,
                batch,
                in_dim,
                &dai,
                true,
                x.data(),
                false,
                0.0,
                &mut dwi,
            );
            let mut dwh = vec![0.0; h3 * hidden];
            gemm(
                h3,
                batch,
                hidden,
                &dah,
                true,
                h_prev.data(),
                false,
                0.0,
                &mut dwh,
            );
            let mut dbi = vec![0.0; h3];
            sum_rows_into(&mut dbi, &dai);
            let mut dbh = vec![0.0; h3];
            sum_rows_into(&mut dbh, &dah);
            let mut dx = vec![0.0; batch * in_dim];
            gemm(
                batch,
                h3,
                in_dim,
                &dai,
                false,
                wi.data(),
                false,
                0.0,
                &mut dx,
            );
            gemm(
                batch,
                h3,
                hidden,
                &dah,
                false,
                wh.data(),
                false,
                1.0,
                &mut dh_prev,
            );
            Ok(Backward {
                grads: Gradients {
                    tensors: vec![
                        Tensor::from_vec(&[h3, in_dim], dwi)?,
                        Tensor::from_vec(&[h3, hidden], dwh)?,
                        Tensor::from_vec(&[h3], dbi)?,
                        Tensor::from_vec(&[h3], dbh)?,
                    ],
                },
                input_grad: Tensor::from_vec(&[batch, in_dim], dx)?,
                state_grad: Some(RecurrentState::Hidden(Tensor::from_vec(
                    &[batch, hidden],
                    dh_prev,
                )?)),
            })
        }
        (LayerKind::Conv1d { kernel, activation }, CacheData::Conv { cols, output }) => {
            upstream.expect_shape(output.shape(), "conv1d upstream")?;
            let w = &p.tensors[0];
            let (out_ch, in_ch) = (w.dim(0), w.dim(2));
            let (batch, steps) = (x.dim(0), x.dim(1));
            let rows = batch * steps;
            let width = kernel * in_ch;
            let dpre: Vec<f64> = upstream
                .data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| g * activation.grad_from_output(*y))
                .collect();
            let mut dw = vec![0.0; out_ch * width];
            gemm(out_ch, rows, width, &dpre, true, cols, false, 0.0, &mut dw);
            let mut db = vec![0.0; out_ch];
            sum_rows_into(&mut db, &dpre);
            let mut dcols = vec![0.0; rows * width];
            gemm(
                rows,
                out_ch,
                width,
                &dpre,
                false,
                w.data(),
                false,
                0.0,
                &mut dcols,
            );
            let dx = col2im(&dcols, batch, steps, in_ch, *kernel);
            Ok(Backward {
                grads: Gradients {
                    tensors: vec![
                        Tensor::from_vec(&[out_ch, *kernel, in_ch], dw)?,
                        Tensor::from_vec(&[out_ch], db)?,
                    ],
                },
                input_grad: Tensor::from_vec(x.shape(), dx)?,
                state_grad: None,
            })
        }
        (LayerKind::GlobalPool, CacheData::Pool) => {
            let (batch, steps, ch) = (x.dim(0), x.dim(1), x.dim(2));
            upstream.expect_shape(&[batch, ch], "pool upstream")?;
            let inv = 1.0 / steps as f64;
            let mut dx = vec![0.0; batch * steps * ch];
            for b in 0..batch {
                let g = &upstream.data()[b * ch..(b + 1) * ch];
                for t in 0..steps {
                    let off = (b * steps + t) * ch;
                    for (d, gv) in dx[off..off + ch].iter_mut().zip(g) {
                        *d = gv * inv;
                    }
                }
            }
            Ok(Backward {
                grads: Gradients { tensors: vec![] },
                input_grad: Tensor::from_vec(x.shape(), dx)?,
                state_grad: None,
            })
        }
        _ => Err(Error::StaleCache(
            "cache payload does not match layer kind".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn dense_identity_passes_input_through() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let p = LayerParams::from_tensors(
            LayerKind::Dense {
                activation: Activation::Identity,
            },
            vec![w, Tensor::zeros(&[3])],
        )
        .unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let f = layer_forward(&p, &x, None).unwrap();
        assert_eq!(f.output, x);
    }

    #[test]
    fn gru_all_zero_keeps_zero_hidden() {
        // r = z = 1/2, n = tanh(0) = 0, h' = (1 - z) * 0 + z * 0 = 0
        let (input, hidden) = (4, 5);
        let p = LayerParams::from_tensors(
            LayerKind::GruCell,
            vec![
                Tensor::zeros(&[3 * hidden, input]),
                Tensor::zeros(&[3 * hidden, hidden]),
                Tensor::zeros(&[3 * hidden]),
                Tensor::zeros(&[3 * hidden]),
            ],
        )
        .unwrap();
        let x = Tensor::uniform(&[2, input], 1.0, &mut seeded(3));
        let f = layer_forward(&p, &x, None).unwrap();
        assert!(f.output.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let ch = 3;
        let mut w = Tensor::zeros(&[ch, 1, ch]);
        for c in 0..ch {
            w.data_mut()[c * ch + c] = 1.0;
        }
        let p = LayerParams::from_tensors(
            LayerKind::Conv1d {
                kernel: 1,
                activation: Activation::Identity,
            },
            vec![w, Tensor::zeros(&[ch])],
        )
        .unwrap();
        let x = Tensor::uniform(&[2, 7, ch], 1.0, &mut seeded(5));
        assert_eq!(layer_forward(&p, &x, None).unwrap().output, x);
    }

    #[test]
    fn dense_zero_upstream_gives_zero_gradients() {
        let mut rng = seeded(1);
        let p = LayerParams::dense(4, 3, Activation::Tanh, 1.0, &mut rng);
        let x = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let f = layer_forward(&p, &x, None).unwrap();
        let b = layer_backward(&p, &f.cache, &Tensor::zeros(&[5, 3]), None).unwrap();
        assert!(b
            .grads
            .tensors
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(b.input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = LayerParams::dense(4, 3, Activation::Identity, 1.0, &mut seeded(1));
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(layer_forward(&p, &x, None), Err(Error::Shape(_))));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = seeded(2);
        let mut p = LayerParams::dense(2, 2, Activation::Identity, 1.0, &mut rng);
        let x = Tensor::uniform(&[1, 2], 1.0, &mut rng);
        let f = layer_forward(&p, &x, None).unwrap();
        p.touch();
        let err = layer_backward(&p, &f.cache, &Tensor::zeros(&[1, 2]), None);
        assert!(matches!(err, Err(Error::StaleCache(_))));

        let other = LayerParams::lstm(2, 2, &mut rng);
        let err = layer_backward(&other, &f.cache, &Tensor::zeros(&[1, 2]), None);
        assert!(matches!(err, Err(Error::StaleCache(_))));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = seeded(9);
        let p = LayerParams::lstm(3, 4, &mut rng);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let a = layer_forward(&p, &x, None).unwrap();
        let b = layer_forward(&p, &x, None).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.state, b.state);
    }
}
