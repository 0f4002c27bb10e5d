#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use drivauth::harness::{prepare_data, train_ensemble, Experiment, ExperimentConfig};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn smoke_config() -> ExperimentConfig {
    let text = std::fs::read_to_string(configs_dir().join("smoke.toml")).unwrap();
    ExperimentConfig::parse(&text).unwrap()
}

/// Three synthetic drivers and a quickly trained ensemble, built once per
/// test binary.
pub fn small_experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = smoke_config();
        let data = prepare_data(&cfg).unwrap();
        let e = train_ensemble(&cfg, &data).unwrap();
        Experiment::new(cfg, data, e).unwrap()
    })
}
