use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{GeneratorSpec, RlConfig, Scenario};
use crate::authenticator::{ArchKind, ArchSpec, TrainConfig};
use crate::dataio::{Schema, SplitSpec, SynthSeparation};
use crate::{Error, Result};

/// Environment variable that overrides the config's `dataset`.
pub const DATASET_ENV: &str = "DRIVAUTH_DATASET";

/// Value of `dataset` selecting the built-in synthetic generator.
pub const SYNTHETIC: &str = "synthetic";

/// Everything one experiment run depends on. Read from a flat TOML file;
/// every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CSV path, or `synthetic`.
    pub dataset: String,
    pub driver_column: String,
    /// Empty: rows are numbered per driver.
    pub time_column: String,
    pub ignore_columns: Vec<String>,
    pub synth_drivers: usize,
    pub synth_seconds: usize,
    pub synth_modifiable_spread: f64,
    pub synth_borderline_spread: f64,
    pub synth_non_modifiable_spread: f64,

    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub hidden: usize,
    pub conv_filters: [usize; 3],

    /// Shipped default when absent.
    pub taxonomy: Option<PathBuf>,
    pub signal_map: Option<PathBuf>,
    pub enforce_safety: bool,
    pub alarm_threshold: usize,

    pub scenarios: Vec<String>,
    /// Victims for the generator attacks; empty means every driver.
    pub targets: Vec<usize>,
    pub bb1_fractions: Vec<f64>,

    pub alpha: f64,
    pub gamma: f64,
    pub max_episode_length: usize,
    pub num_episodes: usize,
    /// Query cap for label-only training.
    pub bb2_max_episodes: usize,
    pub noise_scale: f64,
    pub generator_lr: f64,
    pub update_batch: usize,
    pub imitation_steps: usize,
    pub latent_dim: usize,
    pub generator_hidden: usize,
    pub level_gain: f64,
    /// Fresh latents drawn to score a trained generator.
    pub eval_samples: usize,

    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rl = RlConfig::default();
        let g = GeneratorSpec::default();
        let sep = SynthSeparation::default();
        let split = SplitSpec::default();
        let train = TrainConfig::default();
        ExperimentConfig {
            dataset: SYNTHETIC.into(),
            driver_column: "Class".into(),
            time_column: "Time(s)".into(),
            ignore_columns: vec!["PathOrder".into()],
            synth_drivers: 10,
            synth_seconds: 4000,
            synth_modifiable_spread: sep.modifiable,
            synth_borderline_spread: sep.borderline,
            synth_non_modifiable_spread: sep.non_modifiable,
            train_frac: split.train_frac,
            val_frac: split.val_frac,
            test_frac: split.test_frac,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            minibatch: train.minibatch,
            hidden: 64,
            conv_filters: [128, 256, 128],
            taxonomy: None,
            signal_map: None,
            enforce_safety: true,
            alarm_threshold: 2,
            scenarios: Scenario::ALL
                .iter()
                .map(|s| s.as_str().to_string())
                .collect(),
            targets: Vec::new(),
            bb1_fractions: (1..10).map(|i| i as f64 / 10.0).collect(),
            alpha: rl.alpha,
            gamma: rl.gamma,
            max_episode_length: rl.max_episode_length,
            num_episodes: rl.num_episodes,
            bb2_max_episodes: 200,
            noise_scale: rl.noise_scale,
            generator_lr: rl.generator_lr,
            update_batch: rl.update_batch,
            imitation_steps: rl.imitation_steps,
            latent_dim: g.latent_dim,
            generator_hidden: g.hidden,
            level_gain: g.level_gain,
            eval_samples: 100,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file and applies the dataset environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(DATASET_ENV) {
            if !v.is_empty() {
                self.dataset = v;
            }
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.split_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.rl_config().validate()?;
        for s in &self.scenarios {
            if Scenario::parse(s).is_none() {
                return bad(format!("unknown scenario {s:?}"));
            }
        }
        let files = [
            (!self.is_synthetic()).then(|| PathBuf::from(&self.dataset)),
            self.taxonomy.clone(),
            self.signal_map.clone(),
        ];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.is_synthetic() && self.synth_drivers < 2 {
            return bad("synthetic data needs at least 2 drivers".into());
        }
        if self.alarm_threshold == 0 || self.hidden == 0 || self.minibatch == 0 {
            return bad("alarm_threshold, hidden and minibatch must be positive".into());
        }
        if self.bb1_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("bb1_fractions must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn scenario_list(&self) -> Vec<Scenario> {
        self.scenarios
            .iter()
            .filter_map(|s| Scenario::parse(s))
            .collect()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            driver_column: self.driver_column.clone(),
            time_column: (!self.time_column.is_empty()).then(|| self.time_column.clone()),
            feature_columns: None,
            ignore_columns: self.ignore_columns.clone(),
            driver_labels: None,
        }
    }

    pub fn separation(&self) -> SynthSeparation {
        SynthSeparation {
            modifiable: self.synth_modifiable_spread,
            borderline: self.synth_borderline_spread,
            non_modifiable: self.synth_non_modifiable_spread,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
        }
    }

    pub fn arch(&self, kind: ArchKind, n_features: usize, n_classes: usize) -> ArchSpec {
        ArchSpec::new(kind, n_features, n_classes)
            .with_hidden(self.hidden)
            .with_conv_filters(self.conv_filters)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            minibatch: self.minibatch,
            seed,
        }
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            max_episode_length: self.max_episode_length,
            num_episodes: self.num_episodes,
            noise_scale: self.noise_scale,
            generator_lr: self.generator_lr,
            update_batch: self.update_batch,
            imitation_steps: self.imitation_steps,
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: self.latent_dim,
            hidden: self.generator_hidden,
            level_gain: self.level_gain,
        }
    }
}
