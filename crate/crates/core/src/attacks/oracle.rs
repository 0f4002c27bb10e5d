use crate::authenticator::{Ensemble, Prediction};
use crate::dataio::Batch;
use crate::{Error, Result};

/// Simulated seconds the authenticator needs per decision.
pub const DECISION_SECONDS: u64 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    /// The attacker holds a copy of the ensemble: probabilities, per-window
    /// votes and gradients are all available, queries are free.
    FullProbs,
    /// The attacker only observes the decision for a batch, one per 40
    /// simulated seconds.
    LabelOnly,
}

/// The authenticator as seen by an attacker.
pub struct OracleHandle<'a> {
    ensemble: &'a Ensemble,
    mode: OracleMode,
    queries: u64,
}

impl<'a> OracleHandle<'a> {
    pub fn new(ensemble: &'a Ensemble, mode: OracleMode) -> Self {
        OracleHandle {
            ensemble,
            mode,
            queries: 0,
        }
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn n_classes(&self) -> usize {
        self.ensemble.n_classes()
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Simulated time spent waiting for decisions. Only label-only queries
    /// are rate limited.
    pub fn charged_seconds(&self) -> u64 {
        match self.mode {
            OracleMode::FullProbs => 0,
            OracleMode::LabelOnly => self.queries * DECISION_SECONDS,
        }
    }

    /// The decision for one batch.
    pub fn classify(&mut self, b: &Batch) -> Result<usize> {
        self.queries += 1;
        Ok(self.ensemble.predict_batch(b)?.label)
    }

    /// Batch prediction with probabilities.
    pub fn probabilities(&mut self, b: &Batch) -> Result<Prediction> {
        self.require_full("probability output")?;
        self.queries += 1;
        self.ensemble.predict_batch(b)
    }

    /// Batch decision plus the voted label of every window.
    pub fn window_labels(&mut self, b: &Batch) -> Result<(usize, Vec<usize>)> {
        self.require_full("per-window labels")?;
        self.queries += 1;
        let (batch, windows) = self.ensemble.predict_batch_and_windows(b)?;
        Ok((batch.label, windows.into_iter().map(|p| p.label).collect()))
    }

    /// Direct model access for gradient computation.
    pub fn white_box(&self) -> Result<&'a Ensemble> {
        self.require_full("model access")?;
        Ok(self.ensemble)
    }

    fn require_full(&self, what: &'static str) -> Result<()> {
        match self.mode {
            OracleMode::FullProbs => Ok(()),
            OracleMode::LabelOnly => Err(Error::OracleMode(what)),
        }
    }
}
