//! Minimal differentiable building blocks: dense and recurrent cells, 1-D
//! convolution, pooling, softmax cross-entropy, optimizers and gradient
//! checking. 64-bit floats throughout.

pub mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod sequence;
mod tensor;

pub use gradcheck::{
    grad_check, numeric_input_grad, relative_error, Differentiable, LayerProbe, REL_ERROR_FLOOR,
};
pub use layers::{
    layer_backward, layer_forward, sigmoid, Activation, Backward, Cache, Forward, Gradients,
    LayerKind, LayerParams, RecurrentState,
};
pub use loss::{softmax, softmax_xent, softmax_xent_batch};
pub use optim::{optimizer_step, OptimMode, OptimState};
pub use sequence::{recurrent_backward, recurrent_forward, SequenceCache};
pub use tensor::Tensor;
