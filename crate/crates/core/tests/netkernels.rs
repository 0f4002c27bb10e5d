use drivauth::netkernels::{
    grad_check, numeric_input_grad, relative_error, Activation, Differentiable, LayerParams,
    LayerProbe, Tensor,
};
use drivauth::rng::seeded;
use proptest::prelude::*;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn check_layer(layer: LayerParams, shape: &[usize], seed: u64) -> (f64, f64) {
    let mut rng = seeded(seed);
    let x = Tensor::uniform(shape, 1.0, &mut rng);
    let probe = LayerProbe::new(layer, &x, &mut rng).unwrap();
    let param_err = grad_check(&probe, &x, &[], EPS).unwrap();
    let analytic = probe.input_grad(&x).unwrap();
    let numeric = numeric_input_grad(&x, EPS, |x| probe.loss(x, &[])).unwrap();
    let input_err = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    (param_err, input_err)
}

fn assert_ok(errs: (f64, f64)) -> Result<(), TestCaseError> {
    prop_assert!(errs.0 <= TOL, "param rel err {}", errs.0);
    prop_assert!(errs.1 <= TOL, "input rel err {}", errs.1);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dense_gradients(seed in any::<u64>(), act in 0usize..4) {
        let act = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid][act];
        let mut rng = seeded(seed);
        let layer = LayerParams::dense(5, 4, act, 1.0, &mut rng);
        assert_ok(check_layer(layer, &[3, 5], seed ^ 1))?;
    }

    #[test]
    fn lstm_gradients(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let layer = LayerParams::lstm(3, 4, &mut rng);
        assert_ok(check_layer(layer, &[2, 5, 3], seed ^ 1))?;
    }

    #[test]
    fn gru_gradients(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let layer = LayerParams::gru(3, 4, &mut rng);
        assert_ok(check_layer(layer, &[2, 5, 3], seed ^ 1))?;
    }

    #[test]
    fn conv_gradients(seed in any::<u64>(), k in prop::sample::select(vec![3usize, 5, 8])) {
        let mut rng = seeded(seed);
        let layer = LayerParams::conv1d(3, 4, k, Activation::Tanh, &mut rng);
        assert_ok(check_layer(layer, &[2, 9, 3], seed ^ 1))?;
    }

    #[test]
    fn pool_gradients(seed in any::<u64>()) {
        assert_ok(check_layer(LayerParams::global_pool(), &[2, 6, 3], seed))?;
    }
}

#[test]
fn relu_conv_gradients_away_from_kinks() {
    let mut rng = seeded(11);
    let layer = LayerParams::conv1d(3, 4, 8, Activation::Relu, &mut rng);
    let (p, i) = check_layer(layer, &[2, 16, 3], 12);
    assert!(p <= TOL && i <= TOL, "{p} {i}");
}
