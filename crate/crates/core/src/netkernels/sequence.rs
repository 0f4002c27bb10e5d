//! Unrolling a recurrent cell over a `[B, T, in]` sequence and
//! back-propagation through time.

use super::layers::{layer_backward, layer_forward, Cache, Gradients, LayerKind, LayerParams};
use super::tensor::Tensor;
use crate::{Error, Result};

pub struct SequenceCache {
    steps: Vec<Cache>,
    batch: usize,
    input_size: usize,
}

/// Runs `cell` from a zero state over every step. Returns all hidden states
/// as `[B, T, H]`.
pub fn recurrent_forward(cell: &LayerParams, seq: &Tensor) -> Result<(Tensor, SequenceCache)> {
    if !matches!(cell.kind, LayerKind::LstmCell | LayerKind::GruCell) {
        return Err(Error::Shape(format!(
            "{} is not a recurrent cell",
            cell.kind.name()
        )));
    }
    if seq.rank() != 3 {
        return Err(Error::Shape(format!(
            "sequence input must be [B, T, C], got {:?}",
            seq.shape()
        )));
    }
    let (batch, steps, input_size) = (seq.dim(0), seq.dim(1), seq.dim(2));
    let hidden = cell.hidden_size().expect("recurrent cell");
    let mut out = Tensor::zeros(&[batch, steps, hidden]);
    let mut caches = Vec::with_capacity(steps);
    let mut state = None;
    for t in 0..steps {
        let x_t = seq.time_slice(t);
        let f = layer_forward(cell, &x_t, state.as_ref())?;
        out.set_time_slice(t, &f.output);
        state = f.state;
        caches.push(f.cache);
    }
    Ok((
        out,
        SequenceCache {
            steps: caches,
            batch,
            input_size,
        },
    ))
}

/// Gradients for the parameters and the input sequence, given the gradient
/// with respect to every hidden state `[B, T, H]`.
pub fn recurrent_backward(
    cell: &LayerParams,
    cache: &SequenceCache,
    grad_hidden: &Tensor,
) -> Result<(Gradients, Tensor)> {
    let steps = cache.steps.len();
    let hidden = cell.hidden_size().expect("recurrent cell");
    grad_hidden.expect_shape(&[cache.batch, steps, hidden], "recurrent upstream")?;
    let mut grads = Gradients::zeros_like(cell);
    let mut dx = Tensor::zeros(&[cache.batch, steps, cache.input_size]);
    let mut carry = None;
    for t in (0..steps).rev() {
        let up = grad_hidden.time_slice(t);
        let b = layer_backward(cell, &cache.steps[t], &up, carry.as_ref())?;
        grads.add_assign(&b.grads);
        dx.set_time_slice(t, &b.input_grad);
        carry = b.state_grad;
    }
    Ok((grads, dx))
}
