use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{argmax, mean_rows, Prediction, TrainedModel};
use crate::dataio::{Batch, NormStats};
use crate::netkernels::{checkpoint, Tensor};
use crate::{Error, Result};

/// Three classifiers over the same drivers and feature order.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<TrainedModel>,
}

/// On-disk form: member checkpoint paths (relative to the ensemble file)
/// plus the normalization the members share.
#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    members: Vec<PathBuf>,
    norm_stats: Option<NormStats>,
}

impl Ensemble {
    pub fn new(members: Vec<TrainedModel>) -> Result<Self> {
        if members.len() != 3 {
            return Err(Error::BadEnsemble(format!("got {} members", members.len())));
        }
        let (d, f) = (members[0].n_classes(), members[0].n_features());
        if members
            .iter()
            .any(|m| m.n_classes() != d || m.n_features() != f)
        {
            return Err(Error::BadEnsemble(
                "members disagree on classes or features".into(),
            ));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[TrainedModel] {
        &self.members
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.members[0].norm_stats.as_ref()
    }

    /// Ensemble decision for a batch: each member averages its window
    /// probabilities, then the three member predictions are voted.
    pub fn predict_batch(&self, b: &Batch) -> Result<Prediction> {
        let x = b.to_tensor();
        let preds = self
            .members
            .iter()
            .map(|m| m.predict_mean(&x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ensemble_vote(&preds))
    }

    /// Batch decision together with the voted label of every window, from
    /// one pass over the members.
    pub fn predict_batch_and_windows(&self, b: &Batch) -> Result<(Prediction, Vec<Prediction>)> {
        let x = b.to_tensor();
        let per_member = self
            .members
            .iter()
            .map(|m| m.predict_windows(&x))
            .collect::<Result<Vec<_>>>()?;
        let batch_preds: Vec<Prediction> = per_member
            .iter()
            .map(|rows| Prediction::from_probs(mean_rows(rows)))
            .collect();
        Ok((ensemble_vote(&batch_preds), vote_windows(&per_member)))
    }

    /// Voted prediction for each window of `x` separately.
    pub fn predict_windows(&self, x: &Tensor) -> Result<Vec<Prediction>> {
        let per_member = self
            .members
            .iter()
            .map(|m| m.predict_windows(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(vote_windows(&per_member))
    }

    /// Writes `member_{0,1,2}.json` next to `path` and an index at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("ensemble");
        let mut names = Vec::new();
        for (i, m) in self.members.iter().enumerate() {
            let name = PathBuf::from(format!("{stem}.member{i}.json"));
            m.save(&dir.join(&name))?;
            names.push(name);
        }
        checkpoint::save(
            path,
            "ensemble",
            &EnsembleFile {
                members: names,
                norm_stats: self.norm_stats().cloned(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: EnsembleFile = checkpoint::load(path, "ensemble")?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let members = file
            .members
            .iter()
            .map(|p| {
                let mut m = TrainedModel::load(&dir.join(p))?;
                if m.norm_stats.is_none() {
                    m.norm_stats = file.norm_stats.clone();
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members)
    }
}

fn vote_windows(per_member: &[Vec<Vec<f64>>]) -> Vec<Prediction> {
    (0..per_member[0].len())
        .map(|w| {
            let preds: Vec<Prediction> = per_member
                .iter()
                .map(|rows| Prediction::from_probs(rows[w].clone()))
                .collect();
            ensemble_vote(&preds)
        })
        .collect()
}

/// Majority vote over member predictions. A class with at least two votes
/// wins; if every member disagrees, the class with the highest mean
/// probability wins. The returned probabilities are the member mean.
pub fn ensemble_vote(preds: &[Prediction]) -> Prediction {
    let probs = mean_rows(&preds.iter().map(|p| p.probs.clone()).collect::<Vec<_>>());
    let mut votes = vec![0usize; probs.len()];
    for p in preds {
        votes[p.label] += 1;
    }
    let top = *votes.iter().max().expect("non-empty");
    let label = if top >= 2 {
        votes.iter().position(|&v| v == top).expect("max exists")
    } else {
        argmax(&probs)
    };
    Prediction { probs, label }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(probs: &[f64]) -> Prediction {
        Prediction::from_probs(probs.to_vec())
    }

    #[test]
    fn majority_wins() {
        let v = ensemble_vote(&[
            p(&[0.6, 0.4, 0.0]),
            p(&[0.5, 0.1, 0.4]),
            p(&[0.0, 1.0, 0.0]),
        ]);
        assert_eq!(v.label, 0);
        assert!((v.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_way_split_uses_mean_probability() {
        let v = ensemble_vote(&[
            p(&[0.4, 0.35, 0.25]),
            p(&[0.3, 0.4, 0.3]),
            p(&[0.1, 0.4, 0.5]),
        ]);
        assert_eq!(v.label, 1);
    }
}
