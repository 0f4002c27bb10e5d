mod common;

use drivauth::authenticator::{
    build_model, ensemble_vote, read_training_report, train_model, window_accuracy,
    write_training_report, ArchKind, ArchSpec, Ensemble, Prediction, TrainConfig, TrainedModel,
};
use drivauth::dataio::{
    filter_constant_features, make_windows, normalize, split, synth_dataset, SplitSpec,
    WINDOW_SIZE, WINDOW_STEP,
};
use drivauth::netkernels::Tensor;
use drivauth::rng::seeded;
use drivauth::Error;
use proptest::prelude::*;

fn counted(m: &TrainedModel) -> usize {
    m.layers
        .iter()
        .flat_map(|l| l.tensors.iter())
        .map(|t| t.len())
        .sum()
}

#[test]
fn closed_form_param_count_matches_allocated_tensors() {
    for kind in ArchKind::ALL {
        for (hidden, filters, f, d) in [
            (64, [128, 256, 128], 46, 10),
            (8, [8, 8, 8], 6, 3),
            (5, [3, 7, 2], 11, 2),
        ] {
            let arch = ArchSpec::new(kind, f, d)
                .with_hidden(hidden)
                .with_conv_filters(filters);
            let m = build_model(&arch, 1).unwrap();
            assert_eq!(arch.param_count(), counted(&m), "{kind:?} h={hidden}");
        }
    }
}

#[test]
fn single_class_is_rejected() {
    let arch = ArchSpec::new(ArchKind::Lstm, 46, 1);
    assert!(matches!(
        build_model(&arch, 0),
        Err(Error::TooFewClasses(1))
    ));
}

fn two_driver_windows() -> (
    Vec<drivauth::dataio::Window>,
    Vec<drivauth::dataio::Window>,
    Vec<drivauth::dataio::Window>,
) {
    let ds = filter_constant_features(&synth_dataset(2, 1200, 5)).unwrap();
    let s = split(&ds, &SplitSpec::default(), 5).unwrap();
    let (train, stats) = normalize(&s.train, None);
    let (val, _) = normalize(&s.val, Some(&stats));
    let (test, _) = normalize(&s.test, Some(&stats));
    let w = |d| make_windows(d, WINDOW_SIZE, WINDOW_STEP);
    (w(&train), w(&val), w(&test))
}

#[test]
fn separable_drivers_are_learned_and_training_is_deterministic() {
    let (train, val, test) = two_driver_windows();
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 0.003,
        minibatch: 32,
        seed: 11,
    };
    for kind in ArchKind::ALL {
        let arch = ArchSpec::new(kind, 46, 2)
            .with_hidden(12)
            .with_conv_filters([12, 12, 12]);
        let init = build_model(&arch, 3).unwrap();
        let a = train_model(&init, &train, &val, &cfg).unwrap();
        let b = train_model(&init, &train, &val, &cfg).unwrap();
        assert_eq!(a, b, "{kind:?} training is not deterministic");
        let acc = window_accuracy(&a, &test).unwrap();
        assert!(acc >= 0.95, "{kind:?} test accuracy {acc}");
        assert_eq!(a.history.len(), 4);
    }
}

#[test]
fn model_and_ensemble_checkpoints_round_trip_exactly() {
    let e = &common::small_experiment().ensemble;
    let dir = tempfile::tempdir().unwrap();
    let m = &e.members()[0];
    let p = dir.path().join("m.json");
    m.save(&p).unwrap();
    assert_eq!(&TrainedModel::load(&p).unwrap(), m);

    let p = dir.path().join("ens.json");
    e.save(&p).unwrap();
    let back = Ensemble::load(&p).unwrap();
    assert_eq!(back.members(), e.members());
    assert_eq!(back.norm_stats(), e.norm_stats());

    let p = dir.path().join("hist.csv");
    write_training_report(m, &p).unwrap();
    assert_eq!(read_training_report(&p).unwrap(), m.history);
}

#[test]
fn ensemble_rejects_mismatched_members() {
    let a = build_model(&ArchSpec::new(ArchKind::Lstm, 4, 3).with_hidden(4), 0).unwrap();
    let b = build_model(&ArchSpec::new(ArchKind::RnnGru, 4, 2).with_hidden(4), 0).unwrap();
    assert!(matches!(
        Ensemble::new(vec![a.clone(), a.clone()]),
        Err(Error::BadEnsemble(_))
    ));
    assert!(matches!(
        Ensemble::new(vec![a.clone(), a, b]),
        Err(Error::BadEnsemble(_))
    ));
}

#[test]
fn feature_count_mismatch_is_an_error() {
    let m = build_model(&ArchSpec::new(ArchKind::Lstm, 4, 3).with_hidden(4), 0).unwrap();
    let x = Tensor::zeros(&[1, 16, 5]);
    assert!(m.forward(&x).is_err());
}

fn probs(rng_seed: u64, k: usize) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = seeded(rng_seed);
    (0..3)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

proptest! {
    #[test]
    fn vote_is_majority_else_highest_mean(seed in any::<u64>(), k in 2usize..6) {
        let ps = probs(seed, k);
        let preds: Vec<Prediction> = ps.iter().cloned().map(Prediction::from_probs).collect();
        let out = ensemble_vote(&preds);
        let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
        let majority = (0..k).find(|&c| labels.iter().filter(|&&l| l == c).count() >= 2);
        let mean: Vec<f64> = (0..k).map(|c| ps.iter().map(|p| p[c]).sum::<f64>() / 3.0).collect();
        let expected = majority.unwrap_or_else(|| {
            let best = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mean.iter().position(|&m| m == best).unwrap()
        });
        prop_assert_eq!(out.label, expected);
        for c in 0..k {
            prop_assert!((out.probs[c] - mean[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn vote_ignores_member_order(seed in any::<u64>(), k in 2usize..6, rot in 0usize..3) {
        let preds: Vec<Prediction> = probs(seed, k).into_iter().map(Prediction::from_probs).collect();
        let mut rotated = preds.clone();
        rotated.rotate_left(rot);
        prop_assert_eq!(ensemble_vote(&preds).label, ensemble_vote(&rotated).label);
    }
}
