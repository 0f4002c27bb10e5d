//! Synthetic stand-in for the OCSLab driving dataset.
//!
//! Each driver gets its own mean offset and AR(1) coefficient per feature, on
//! top of a shared per-driver "driving intensity" process, so drivers are
//! statistically separable. How far apart the per-driver offsets sit depends
//! on the feature's safety class: modifiable signals carry most of the
//! identity, borderline and non-modifiable signals less. Eight constant
//! columns are interleaved so the pipeline's constant filter has work to do.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{RawDataset, Row};
use super::taxonomy::{SafetyClass, SafetyTaxonomy};
use crate::rng::stage_rng;

/// Names of the always-constant columns the synthetic data carries.
pub const CONSTANT_COLUMNS: [&str; 8] = [
    "Glow plug control request",
    "Converter clutch",
    "Clutch operation acknowledge",
    "Gear selection",
    "Engine coolant temperature 2",
    "Reserved signal 1",
    "Reserved signal 2",
    "Reserved signal 3",
];

/// Column positions of [`CONSTANT_COLUMNS`] in the 54-column layout.
const CONSTANT_POSITIONS: [usize; 8] = [3, 10, 17, 24, 31, 38, 45, 52];

/// Per-class spread of driver offsets, in units of the per-feature noise.
#[derive(Clone, Copy, Debug)]
pub struct SynthSeparation {
    pub modifiable: f64,
    pub borderline: f64,
    pub non_modifiable: f64,
}

impl Default for SynthSeparation {
    fn default() -> Self {
        SynthSeparation {
            modifiable: 1.0,
            borderline: 0.45,
            non_modifiable: 0.45,
        }
    }
}

pub fn synth_dataset(n_drivers: usize, seconds_per_driver: usize, seed: u64) -> RawDataset {
    synth_dataset_with(
        n_drivers,
        seconds_per_driver,
        seed,
        SynthSeparation::default(),
    )
}

pub fn synth_dataset_with(
    n_drivers: usize,
    seconds_per_driver: usize,
    seed: u64,
    sep: SynthSeparation,
) -> RawDataset {
    assert!(n_drivers >= 2, "need at least two drivers");
    let tax = SafetyTaxonomy::default_ocslab();
    let informative: Vec<(String, SafetyClass)> = tax
        .feature_names()
        .map(|n| (n.to_string(), tax.class_of(n).expect("own feature")))
        .collect();
    let n_cols = informative.len() + CONSTANT_COLUMNS.len();

    // Column layout: constants at fixed positions, informative features fill the rest.
    let mut layout: Vec<Option<usize>> = Vec::with_capacity(n_cols);
    let mut feature_names = Vec::with_capacity(n_cols);
    let (mut next_inf, mut next_const) = (0, 0);
    for col in 0..n_cols {
        if CONSTANT_POSITIONS.contains(&col) {
            feature_names.push(CONSTANT_COLUMNS[next_const].to_string());
            layout.push(None);
            next_const += 1;
        } else {
            feature_names.push(informative[next_inf].0.clone());
            layout.push(Some(next_inf));
            next_inf += 1;
        }
    }

    let mut rng = stage_rng(seed, "synth");
    let n_inf = informative.len();
    let speed = informative
        .iter()
        .position(|(n, _)| n == "Vehicle speed")
        .expect("vehicle speed in taxonomy");

    // Per-feature physical scale, base level and loading on the shared process.
    let scale: Vec<f64> = (0..n_inf)
        .map(|_| 10f64.powf(rng.random_range(-1.0..3.0)))
        .collect();
    let base: Vec<f64> = (0..n_inf).map(|_| rng.random_range(-2.0..2.0)).collect();
    let loading: Vec<f64> = (0..n_inf).map(|_| rng.random_range(-0.6..0.6)).collect();
    let const_values: Vec<f64> = (0..CONSTANT_COLUMNS.len())
        .map(|i| {
            if i % 2 == 0 {
                0.0
            } else {
                rng.random_range(1.0..100.0)
            }
        })
        .collect();

    let spread = |c: SafetyClass| match c {
        SafetyClass::Modifiable => sep.modifiable,
        SafetyClass::Borderline => sep.borderline,
        SafetyClass::NonModifiable => sep.non_modifiable,
    };

    let mut rows = Vec::with_capacity(n_drivers * seconds_per_driver);
    for d in 0..n_drivers {
        let offset: Vec<f64> = informative
            .iter()
            .map(|(_, c)| spread(*c) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let phi: Vec<f64> = (0..n_inf).map(|_| rng.random_range(0.5..0.95)).collect();
        let intensity_phi: f64 = rng.random_range(0.85..0.97);
        let mut shared: f64 = rng.sample(StandardNormal);
        let mut noise: Vec<f64> = (0..n_inf).map(|_| rng.sample(StandardNormal)).collect();
        for t in 0..seconds_per_driver {
            let e: f64 = StandardNormal.sample(&mut rng);
            shared = intensity_phi * shared + (1.0 - intensity_phi * intensity_phi).sqrt() * e;
            let mut inf_values = Vec::with_capacity(n_inf);
            for f in 0..n_inf {
                let e: f64 = StandardNormal.sample(&mut rng);
                noise[f] = phi[f] * noise[f] + (1.0 - phi[f] * phi[f]).sqrt() * e;
                let mut level = base[f] + offset[f] + loading[f] * shared + 0.5 * noise[f];
                if f == speed {
                    level = (level + 1.5).max(0.0);
                }
                inf_values.push(scale[f] * level);
            }
            let values = layout
                .iter()
                .enumerate()
                .map(|(col, slot)| match slot {
                    Some(f) => inf_values[*f],
                    None => {
                        let k = CONSTANT_POSITIONS.iter().position(|&p| p == col).unwrap();
                        const_values[k]
                    }
                })
                .collect();
            rows.push(Row {
                driver: d,
                time: t as i64,
                values,
            });
        }
    }
    RawDataset {
        feature_names,
        driver_labels: (0..n_drivers).map(|d| format!("driver{d}")).collect(),
        rows,
    }
}
