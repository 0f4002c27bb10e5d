use serde::{Deserialize, Serialize};

use super::layers::{Gradients, LayerParams};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimMode {
    /// `w -= lr * g`
    Plain,
    /// Adam: first-moment momentum with per-parameter second-moment scaling.
    Adaptive { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimMode {
    pub fn adaptive() -> Self {
        OptimMode::Adaptive {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub learning_rate: f64,
    pub mode: OptimMode,
    first: Vec<Vec<Tensor>>,
    second: Vec<Vec<Tensor>>,
    steps: u64,
}

impl OptimState {
    pub fn new(learning_rate: f64, mode: OptimMode) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        OptimState {
            learning_rate,
            mode,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn adaptive(learning_rate: f64) -> Self {
        Self::new(learning_rate, OptimMode::adaptive())
    }

    pub fn plain(learning_rate: f64) -> Self {
        Self::new(learning_rate, OptimMode::Plain)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Applies one update. Fails without touching any parameter if a gradient
/// is non-finite or not congruent with its layer.
pub fn optimizer_step(
    opt: &mut OptimState,
    params: &mut [LayerParams],
    grads: &[Gradients],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} layers but {} gradient sets",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.tensors.len() != g.tensors.len()
            || p.tensors
                .iter()
                .zip(&g.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape(format!(
                "gradients for layer {i} not congruent"
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { layer: i });
        }
    }
    opt.steps += 1;
    let lr = opt.learning_rate;
    match opt.mode {
        OptimMode::Plain => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (w, dw) in p.tensors.iter_mut().zip(&g.tensors) {
                    for (x, d) in w.data_mut().iter_mut().zip(dw.data()) {
                        *x -= lr * d;
                    }
                }
                p.touch();
            }
        }
        OptimMode::Adaptive { beta1, beta2, eps } => {
            if opt.first.is_empty() {
                let zeros = |p: &LayerParams| -> Vec<Tensor> {
                    p.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
                };
                opt.first = params.iter().map(zeros).collect();
                opt.second = params.iter().map(zeros).collect();
            }
            let t = opt.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (li, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                for (ti, (w, dw)) in p.tensors.iter_mut().zip(&g.tensors).enumerate() {
                    let m = opt.first[li][ti].data_mut();
                    let v = opt.second[li][ti].data_mut();
                    for (((x, d), mi), vi) in w
                        .data_mut()
                        .iter_mut()
                        .zip(dw.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                p.touch();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netkernels::layers::{Activation, LayerKind};

    fn scalar_layer(w: f64) -> LayerParams {
        LayerParams::from_tensors(
            LayerKind::Dense {
                activation: Activation::Identity,
            },
            vec![
                Tensor::from_vec(&[1, 1], vec![w]).unwrap(),
                Tensor::zeros(&[1]),
            ],
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            tensors: vec![
                Tensor::from_vec(&[1, 1], vec![g]).unwrap(),
                Tensor::zeros(&[1]),
            ],
        }
    }

    #[test]
    fn plain_step_hand_arithmetic() {
        let mut p = vec![scalar_layer(1.0)];
        let mut opt = OptimState::plain(0.1);
        optimizer_step(&mut opt, &mut p, &[scalar_grad(0.5)]).unwrap();
        assert!((p[0].tensors[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        for mut opt in [OptimState::plain(0.1), OptimState::adaptive(0.1)] {
            let mut p = vec![scalar_layer(0.7)];
            optimizer_step(&mut opt, &mut p, &[scalar_grad(0.0)]).unwrap();
            assert_eq!(p[0].tensors[0].data()[0], 0.7);
        }
    }

    #[test]
    fn identical_steps_are_deterministic() {
        let run = || {
            let mut p = vec![scalar_layer(0.3)];
            let mut opt = OptimState::adaptive(0.01);
            for _ in 0..2 {
                optimizer_step(&mut opt, &mut p, &[scalar_grad(0.25)]).unwrap();
            }
            p[0].tensors[0].data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![scalar_layer(1.0)];
        let mut opt = OptimState::adaptive(0.1);
        let err = optimizer_step(&mut opt, &mut p, &[scalar_grad(f64::NAN)]);
        assert!(matches!(err, Err(Error::NonFiniteGradient { layer: 0 })));
        assert_eq!(p[0].tensors[0].data()[0], 1.0);
    }
}
