use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{argmax, EpochRecord, TrainedModel};
use crate::dataio::{windows_to_tensor, Window};
use crate::netkernels::{optimizer_step, Differentiable, OptimState};
use crate::rng::stage_rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Windows per gradient step.
    pub minibatch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            learning_rate: 0.001,
            minibatch: 32,
            seed: 0,
        }
    }
}

/// Per-window accuracy of `m` on `windows`.
pub fn window_accuracy(m: &TrainedModel, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in windows.chunks(256) {
        let probs = m.predict_windows(&windows_to_tensor(chunk))?;
        correct += probs
            .iter()
            .zip(chunk)
            .filter(|(p, w)| argmax(p) == w.driver)
            .count();
    }
    Ok(correct as f64 / windows.len() as f64)
}

/// Supervised training, window to driver label, with Adam. Keeps the
/// parameters from the epoch with the best validation accuracy (the earliest
/// on ties); with no validation windows the last epoch wins.
pub fn train_model(
    model: &TrainedModel,
    train: &[Window],
    val: &[Window],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n_classes = model.n_classes();
    if let Some(w) = train
        .iter()
        .chain(val)
        .find(|w| w.n_features != model.n_features())
    {
        return Err(Error::FeatureMismatch {
            expected: model.n_features(),
            got: w.n_features,
        });
    }
    if let Some(w) = train.iter().chain(val).find(|w| w.driver >= n_classes) {
        return Err(Error::TargetOutOfRange {
            target: w.driver,
            classes: n_classes,
        });
    }
    let mut rng = stage_rng(cfg.seed, &format!("train/{}", model.arch.kind.name()));
    let mut opt = OptimState::adaptive(cfg.learning_rate);
    let mut current = model.clone();
    current.history.clear();
    let mut best = current.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.minibatch.max(1)) {
            let ws: Vec<Window> = idx.iter().map(|&i| train[i].clone()).collect();
            let targets: Vec<usize> = ws.iter().map(|w| w.driver).collect();
            let (loss, grads) = current.loss_and_grads(&windows_to_tensor(&ws), &targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            optimizer_step(&mut opt, &mut current.layers, &grads).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::Diverged { epoch, loss },
                other => other,
            })?;
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_accuracy = window_accuracy(&current, val)?;
        log::debug!(
            "{} epoch {epoch}: loss {train_loss:.4} val {val_accuracy:.4}",
            model.arch.kind.name()
        );
        current.history.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });
        if val.is_empty() || val_accuracy > best_acc {
            best_acc = val_accuracy;
            best.layers = current.layers.clone();
        }
    }
    best.history = current.history;
    Ok(best)
}

/// Writes the per-epoch history as `epoch,train_loss,val_accuracy`.
pub fn write_training_report(m: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_accuracy"])?;
    for r in &m.history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a report written by [`write_training_report`].
pub fn read_training_report(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad training report row {rec:?}")))
        };
        out.push(EpochRecord {
            epoch: field(0)? as usize,
            train_loss: field(1)?,
            val_accuracy: field(2)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authenticator::{build_model, ArchKind, ArchSpec};

    #[test]
    fn zero_epochs_returns_initialization() {
        let arch = ArchSpec::new(ArchKind::Lstm, 3, 2).with_hidden(4);
        let m = build_model(&arch, 1).unwrap();
        let w = Window {
            driver: 1,
            start_time: 0,
            step: 8,
            size: 16,
            n_features: 3,
            values: vec![0.5; 48],
        };
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train_model(&m, &[w], &[], &cfg).unwrap();
        assert_eq!(out.layers, m.layers);
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_training_set() {
        let m = build_model(&ArchSpec::new(ArchKind::Lstm, 3, 2).with_hidden(4), 1).unwrap();
        assert!(matches!(
            train_model(&m, &[], &[], &TrainConfig::default()),
            Err(Error::EmptyTrainingSet)
        ));
    }
}
