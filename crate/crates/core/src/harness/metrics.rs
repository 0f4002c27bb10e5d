use crate::{Error, Result};

/// One-vs-rest counts for one class, or summed over classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// One-vs-rest counts for `class` from (prediction, label) pairs.
    pub fn one_vs_rest(pairs: &[(usize, usize)], class: usize) -> Self {
        let mut c = ConfusionCounts::default();
        for &(pred, label) in pairs {
            match (pred == class, label == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::MetricUndefined("accuracy of zero samples"));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// `2tp / (2tp + fp + fn)`; 0 (with a warning) when nothing was predicted
/// or present.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        log::warn!("F1 undefined (no positives predicted or present); reporting 0");
        return 0.0;
    }
    (2 * c.tp) as f64 / denom as f64
}

pub fn asr(fooled: u64, sent: u64) -> Result<f64> {
    if sent == 0 {
        return Err(Error::MetricUndefined("ASR with no batches sent"));
    }
    Ok(fooled as f64 / sent as f64)
}

/// False acceptance rate seen by the victim; the same number as the
/// attacker's success rate.
pub fn far(fooled: u64, sent: u64) -> Result<f64> {
    asr(fooled, sent)
}

/// Multi-class summary from (prediction, label) pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    /// Fraction of exactly-right predictions.
    pub accuracy: f64,
    /// Macro average over one-vs-rest F1 scores.
    pub f1: f64,
}

pub fn classification_report(pairs: &[(usize, usize)], n_classes: usize) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::MetricUndefined("accuracy of zero samples"));
    }
    let correct = pairs.iter().filter(|(p, l)| p == l).count();
    let f1_sum: f64 = (0..n_classes)
        .map(|c| f1(&ConfusionCounts::one_vs_rest(pairs, c)))
        .sum();
    Ok(MetricReport {
        accuracy: correct as f64 / pairs.len() as f64,
        f1: f1_sum / n_classes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let c = ConfusionCounts {
            tp: 50,
            tn: 40,
            fp: 5,
            fn_: 5,
        };
        assert!((accuracy(&c).unwrap() - 0.9).abs() < 1e-15);
        assert!((f1(&c) - 100.0 / 110.0).abs() < 1e-15);
        assert_eq!(asr(865, 1000).unwrap(), 0.865);
        assert_eq!(asr(0, 3).unwrap(), 0.0);
        assert!(asr(0, 0).is_err());
        assert!(accuracy(&ConfusionCounts::default()).is_err());
        assert_eq!(f1(&ConfusionCounts::default()), 0.0);
    }
}
