use super::oracle::OracleHandle;
use crate::canbus::{reconstruct_samples, CanFrame};
use crate::dataio::{
    make_batches, make_windows, Batch, Dataset, DriverId, Row, SafetyTaxonomy, BATCH_SIZE,
    WINDOW_SIZE, WINDOW_STEP,
};
use crate::harness::asr;
use crate::{Error, Result};

/// Columns an attacker may overwrite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModifiableMask {
    pub columns: Vec<usize>,
    pub n_features: usize,
}

impl ModifiableMask {
    /// Fails if the taxonomy does not cover every feature.
    pub fn new(tax: &SafetyTaxonomy, features: &[String]) -> Result<Self> {
        Ok(ModifiableMask {
            columns: tax.modifiable_indices(features)?,
            n_features: features.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

fn check_pair(a: &Batch, v: &Batch) -> Result<()> {
    let same = a.windows.len() == v.windows.len()
        && a.windows
            .iter()
            .zip(&v.windows)
            .all(|(x, y)| x.size == y.size && x.n_features == y.n_features);
    if same {
        Ok(())
    } else {
        Err(Error::Shape(
            "attacker and victim batches differ in shape".into(),
        ))
    }
}

/// The attacker's batch with every modifiable column replaced by the
/// victim's values. Driver and timing stay the attacker's.
pub fn smart_replay_merge(
    attacker: &Batch,
    victim: &Batch,
    mask: &ModifiableMask,
) -> Result<Batch> {
    check_pair(attacker, victim)?;
    if attacker.n_features() != mask.n_features {
        return Err(Error::FeatureMismatch {
            expected: mask.n_features,
            got: attacker.n_features(),
        });
    }
    let mut out = attacker.clone();
    let nf = mask.n_features;
    for (w, vw) in out.windows.iter_mut().zip(&victim.windows) {
        for t in 0..w.size {
            for &c in &mask.columns {
                w.values[t * nf + c] = vw.values[t * nf + c];
            }
        }
    }
    Ok(out)
}

/// Fooled/sent tally of one campaign.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AsrCount {
    pub fooled: u64,
    pub sent: u64,
}

impl AsrCount {
    pub fn record(&mut self, fooled: bool) {
        self.sent += 1;
        self.fooled += u64::from(fooled);
    }

    pub fn rate(&self) -> Result<f64> {
        asr(self.fooled, self.sent)
    }
}

/// Smart-replay campaign: each attacker batch is paired with a victim batch
/// by index (cycling the shorter list), merged and sent to the oracle.
pub fn run_gb1(
    attacker: &[Batch],
    victim: &[Batch],
    target: DriverId,
    oracle: &mut OracleHandle<'_>,
    mask: &ModifiableMask,
) -> Result<AsrCount> {
    if attacker.is_empty() || victim.is_empty() {
        return Err(Error::EmptyAttackData(
            "smart replay needs attacker and victim batches".into(),
        ));
    }
    let n = attacker.len().max(victim.len());
    let mut count = AsrCount::default();
    for i in 0..n {
        let merged = smart_replay_merge(
            &attacker[i % attacker.len()],
            &victim[i % victim.len()],
            mask,
        )?;
        count.record(oracle.classify(&merged)? == target);
    }
    Ok(count)
}

/// Rebuilds the victim's batches from what a tap sniffed while they drove.
pub fn bb1_collect(log: &[CanFrame], features: &[String], victim: DriverId) -> Result<Vec<Batch>> {
    let samples = reconstruct_samples(log, features);
    let needed = (BATCH_SIZE - 1) * WINDOW_STEP + WINDOW_SIZE;
    if samples.len() < needed {
        return Err(Error::SniffTooShort {
            seconds: samples.len(),
            needed,
        });
    }
    let ds = Dataset {
        feature_names: features.to_vec(),
        driver_labels: Vec::new(),
        rows: samples
            .into_iter()
            .enumerate()
            .map(|(t, values)| Row {
                driver: victim,
                time: t as i64,
                values,
            })
            .collect(),
        dropped: Vec::new(),
        norm_stats: None,
    };
    Ok(make_batches(
        &make_windows(&ds, WINDOW_SIZE, WINDOW_STEP),
        BATCH_SIZE,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{default_feature_names, Window};

    fn batch(driver: usize, fill: f64) -> Batch {
        let nf = 46;
        Batch {
            driver,
            windows: (0..4)
                .map(|i| Window {
                    driver,
                    start_time: 8 * i,
                    step: 8,
                    size: 16,
                    n_features: nf,
                    values: vec![fill; 16 * nf],
                })
                .collect(),
        }
    }

    #[test]
    fn merge_touches_exactly_the_modifiable_columns() {
        let mask = ModifiableMask::new(&SafetyTaxonomy::default_ocslab(), &default_feature_names())
            .unwrap();
        let out = smart_replay_merge(&batch(0, 0.0), &batch(1, 1.0), &mask).unwrap();
        let ones: usize = (0..46).filter(|&c| out.windows[0].row(0)[c] == 1.0).count();
        assert_eq!(ones, 22);
        assert_eq!(out.driver, 0);
        let same = smart_replay_merge(&batch(0, 0.3), &batch(0, 0.3), &mask).unwrap();
        assert_eq!(same, batch(0, 0.3));
    }

    #[test]
    fn short_sniff_log_is_rejected() {
        assert!(matches!(
            bb1_collect(&[], &default_feature_names(), 0),
            Err(Error::SniffTooShort { seconds: 0, .. })
        ));
    }
}
