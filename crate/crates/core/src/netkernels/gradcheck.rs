//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::layers::{layer_backward, layer_forward, Gradients, LayerKind, LayerParams};
use super::sequence::{recurrent_backward, recurrent_forward};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error instead of round-off noise.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Anything with parameters and a scalar loss whose gradient it can compute.
pub trait Differentiable {
    fn layers(&self) -> &[LayerParams];
    fn layers_mut(&mut self) -> &mut [LayerParams];
    fn loss(&self, input: &Tensor, targets: &[usize]) -> Result<f64>;
    fn loss_and_grads(&self, input: &Tensor, targets: &[usize]) -> Result<(f64, Vec<Gradients>)>;
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter of `model`.
pub fn grad_check<M: Differentiable + Clone>(
    model: &M,
    input: &Tensor,
    targets: &[usize],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let (_, analytic) = model.loss_and_grads(input, targets)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for li in 0..model.layers().len() {
        for ti in 0..model.layers()[li].tensors.len() {
            for k in 0..model.layers()[li].tensors[ti].len() {
                let orig = model.layers()[li].tensors[ti].data()[k];
                probe.layers_mut()[li].tensors[ti].data_mut()[k] = orig + eps;
                let plus = probe.loss(input, targets)?;
                probe.layers_mut()[li].tensors[ti].data_mut()[k] = orig - eps;
                let minus = probe.loss(input, targets)?;
                probe.layers_mut()[li].tensors[ti].data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[li].tensors[ti].data()[k];
                worst = worst.max(relative_error(a, numeric));
            }
        }
    }
    Ok(worst)
}

/// Single layer under a fixed random linear read-out, `loss = sum(out * w)`.
/// Recurrent cells are unrolled over the time axis of a `[B, T, C]` input.
#[derive(Clone, Debug)]
pub struct LayerProbe {
    pub layer: Vec<LayerParams>,
    readout: Tensor,
}

impl LayerProbe {
    pub fn new<R: Rng + ?Sized>(layer: LayerParams, input: &Tensor, rng: &mut R) -> Result<Self> {
        let mut probe = LayerProbe {
            layer: vec![layer],
            readout: Tensor::zeros(&[0]),
        };
        let out = probe.output(input)?;
        probe.readout = Tensor::uniform(out.shape(), 1.0, rng);
        Ok(probe)
    }

    fn is_recurrent(&self) -> bool {
        matches!(self.layer[0].kind, LayerKind::LstmCell | LayerKind::GruCell)
    }

    fn output(&self, input: &Tensor) -> Result<Tensor> {
        if self.is_recurrent() {
            Ok(recurrent_forward(&self.layer[0], input)?.0)
        } else {
            Ok(layer_forward(&self.layer[0], input, None)?.output)
        }
    }

    /// Analytic gradient of the probe loss with respect to the input.
    pub fn input_grad(&self, input: &Tensor) -> Result<Tensor> {
        if self.is_recurrent() {
            let (_, cache) = recurrent_forward(&self.layer[0], input)?;
            Ok(recurrent_backward(&self.layer[0], &cache, &self.readout)?.1)
        } else {
            let f = layer_forward(&self.layer[0], input, None)?;
            Ok(layer_backward(&self.layer[0], &f.cache, &self.readout, None)?.input_grad)
        }
    }
}

impl Differentiable for LayerProbe {
    fn layers(&self) -> &[LayerParams] {
        &self.layer
    }

    fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layer
    }

    fn loss(&self, input: &Tensor, _targets: &[usize]) -> Result<f64> {
        let out = self.output(input)?;
        Ok(out
            .data()
            .iter()
            .zip(self.readout.data())
            .map(|(a, b)| a * b)
            .sum())
    }

    fn loss_and_grads(&self, input: &Tensor, targets: &[usize]) -> Result<(f64, Vec<Gradients>)> {
        let loss = self.loss(input, targets)?;
        let grads = if self.is_recurrent() {
            let (_, cache) = recurrent_forward(&self.layer[0], input)?;
            recurrent_backward(&self.layer[0], &cache, &self.readout)?.0
        } else {
            let f = layer_forward(&self.layer[0], input, None)?;
            layer_backward(&self.layer[0], &f.cache, &self.readout, None)?.grads
        };
        Ok((loss, vec![grads]))
    }
}

/// Central-difference input gradient for any scalar function of a tensor.
pub fn numeric_input_grad<F>(input: &Tensor, eps: f64, mut f: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut x = input.clone();
    let mut grad = Tensor::zeros(input.shape());
    for k in 0..input.len() {
        let orig = input.data()[k];
        x.data_mut()[k] = orig + eps;
        let plus = f(&x)?;
        x.data_mut()[k] = orig - eps;
        let minus = f(&x)?;
        x.data_mut()[k] = orig;
        grad.data_mut()[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netkernels::layers::Activation;
    use crate::rng::seeded;

    #[test]
    fn zero_epsilon_is_rejected() {
        let mut rng = seeded(1);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let probe = LayerProbe::new(
            LayerParams::dense(3, 2, Activation::Tanh, 1.0, &mut rng),
            &x,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            grad_check(&probe, &x, &[], 0.0),
            Err(Error::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn dense_probe_passes() {
        let mut rng = seeded(2);
        let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let probe = LayerProbe::new(
            LayerParams::dense(4, 5, Activation::Sigmoid, 1.0, &mut rng),
            &x,
            &mut rng,
        )
        .unwrap();
        assert!(grad_check(&probe, &x, &[], 1e-4).unwrap() <= 1e-4);
    }
}
