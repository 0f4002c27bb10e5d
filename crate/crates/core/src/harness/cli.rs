//! Command-line entry point.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use super::config::ExperimentConfig;
use super::experiment::{
    prepare_data, run_experiment, run_stages, train_ensemble, Experiment, PreparedData,
    ReportBundle, StageStatus,
};
use super::report::emit_reports;
use crate::attacks::Scenario;
use crate::authenticator::{write_training_report, Ensemble};
use crate::canbus::{run_drive, write_sniff_log, DriveSetup};
use crate::dataio::SafetyClass;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STAGE: i32 = 2;

const ENSEMBLE_FILE: &str = "ensemble.json";

#[derive(Debug, Parser)]
#[command(
    name = "drivauth",
    version,
    about = "Driver-authentication testbed and attack suite"
)]
pub struct Cli {
    /// Flat TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dataset CSV path, or `synthetic`.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// Let the attacker overwrite every signal.
    #[arg(long, global = true)]
    pub no_safety_enforcement: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, filter and split the dataset and describe it.
    Ingest,
    /// Train the three models and save the ensemble.
    Train,
    /// Test-set accuracy and F1 of each model and the ensemble.
    EvalBaseline,
    /// Run one attack scenario.
    Attack {
        #[arg(value_parser = parse_scenario)]
        scenario: Scenario,
    },
    /// Replay one driver's test driving on the simulated bus and export the
    /// sniffed traffic.
    SimulateBus {
        #[arg(long, default_value_t = 0)]
        driver: usize,
        /// Seconds to replay; all of the driver's test data by default.
        #[arg(long)]
        seconds: Option<usize>,
    },
    /// Full experiment and every report file.
    Report,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| format!("unknown scenario {s:?} (wb, gb1, gb2, bb1, bb2)"))
}

/// Config error (exit 1) or stage failure (exit 2).
#[derive(Debug)]
enum Failure {
    Config(Error),
    Stage(Error),
    /// The run finished but some stages failed; reports were written.
    StagesFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            e => Failure::Stage(e),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(Error::Config(e.to_string())),
            e => Failure::Config(e),
        })?,
        None => {
            let mut c = ExperimentConfig::default();
            c.apply_env();
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset = d.clone();
    }
    if cli.no_safety_enforcement {
        cfg.enforce_safety = false;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Stage(Error::io(dir, e)))
}

/// Loads the ensemble saved by `train` in the output directory, or trains
/// and saves one.
fn ensemble_for(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    out: &Path,
) -> Result<Ensemble, Failure> {
    let path = out.join(ENSEMBLE_FILE);
    if path.is_file() {
        let e = Ensemble::load(&path)?;
        if e.norm_stats() != Some(&data.stats) {
            return Err(Failure::Stage(Error::BadEnsemble(format!(
                "{} was trained on different data; rerun `train`",
                path.display()
            ))));
        }
        info!("using {}", path.display());
        return Ok(e);
    }
    let e = train_ensemble(cfg, data)?;
    create_out(out)?;
    e.save(&path)?;
    Ok(e)
}

fn describe(cfg: &ExperimentConfig, data: &PreparedData) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dataset = {}", cfg.dataset);
    let _ = writeln!(s, "drivers = {}", data.n_drivers());
    let _ = writeln!(s, "features = {}", data.features().len());
    let _ = writeln!(s, "dropped_constant = {}", data.train.dropped.join("; "));
    for (name, ds) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        let _ = writeln!(s, "rows.{name} = {}", ds.rows.len());
    }
    let _ = writeln!(s, "windows.train = {}", data.train_windows.len());
    let _ = writeln!(s, "windows.val = {}", data.val_windows.len());
    let _ = writeln!(s, "windows.test = {}", data.test_windows.len());
    for (class, label) in [
        (SafetyClass::Modifiable, "modifiable"),
        (SafetyClass::Borderline, "borderline"),
        (SafetyClass::NonModifiable, "non_modifiable"),
    ] {
        let n = data
            .features()
            .iter()
            .filter(|f| data.taxonomy.class_of(f) == Some(class))
            .count();
        let _ = writeln!(s, "taxonomy.{label} = {n}");
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Stage(Error::io(path, e)))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Report => {
            let bundle = run_experiment(&cfg)?;
            for p in emit_reports(&bundle, out)? {
                println!("{}", p.display());
            }
            check_stages(&bundle)?;
        }
        Command::Ingest => {
            let data = prepare_data(&cfg)?;
            create_out(out)?;
            let path = out.join("dataset_summary.txt");
            write_text(&path, &describe(&cfg, &data))?;
            println!("{}", path.display());
        }
        Command::Train => {
            let data = prepare_data(&cfg)?;
            let _ = std::fs::remove_file(out.join(ENSEMBLE_FILE));
            let e = ensemble_for(&cfg, &data, out)?;
            for m in e.members() {
                let path = out.join(format!("training_{}.csv", m.arch.kind.name()));
                write_training_report(m, &path)?;
                println!("{}", path.display());
            }
            println!("{}", out.join(ENSEMBLE_FILE).display());
        }
        Command::EvalBaseline => {
            let data = prepare_data(&cfg)?;
            let e = ensemble_for(&cfg, &data, out)?;
            let exp = Experiment::new(cfg, data, e)?;
            let scores = exp.baseline()?;
            let mut text = String::from("model,accuracy,f1,batches\n");
            for s in &scores {
                let _ = writeln!(
                    text,
                    "{},{:.6},{:.6},{}",
                    s.model, s.accuracy, s.f1, s.batches
                );
                println!("{:<10} accuracy {:.4}  f1 {:.4}", s.model, s.accuracy, s.f1);
            }
            write_text(&out.join("baseline.csv"), &text)?;
        }
        Command::Attack { scenario } => {
            let data = prepare_data(&cfg)?;
            let e = ensemble_for(&cfg, &data, out)?;
            cfg.scenarios = vec![scenario.as_str().to_string()];
            let exp = Experiment::new(cfg, data, e)?;
            let bundle = run_stages(&exp);
            emit_reports(&bundle, out)?;
            for c in &bundle.campaigns {
                println!(
                    "{} {} -> {}: asr {:.4} ({} of {}), {:.2} min, {} alarms",
                    c.scenario,
                    bundle.drivers[c.attacker],
                    bundle.drivers[c.victim],
                    c.asr,
                    c.fooled,
                    c.sent,
                    c.timing.total_min,
                    c.alarms
                );
            }
            check_stages(&bundle)?;
        }
        Command::SimulateBus { driver, seconds } => {
            let data = prepare_data(&cfg)?;
            if *driver >= data.n_drivers() {
                return Err(Failure::Config(Error::Config(format!(
                    "driver {driver} out of range ({} drivers)",
                    data.n_drivers()
                ))));
            }
            let rows = data.test_rows(*driver);
            let n = seconds.unwrap_or(rows.len()).min(rows.len());
            let setup = DriveSetup {
                features: data.features().to_vec(),
                map: data.map.clone(),
                taxonomy: data.taxonomy.clone(),
                enforce_safety: cfg.enforce_safety,
                sniff: true,
            };
            let rec = run_drive(&setup, &rows[..n], None)?;
            let exact = rec.samples.as_slice() == &rows[..n];
            create_out(out)?;
            let path = out.join("sniff_log.csv");
            write_sniff_log(&rec.sniff_log, &path)?;
            println!(
                "{} frames over {n} s, samples {} the replayed data; {}",
                rec.sniff_log.len(),
                if exact { "match" } else { "DIFFER from" },
                path.display()
            );
        }
    }
    Ok(())
}

fn check_stages(bundle: &ReportBundle) -> Result<(), Failure> {
    let failed: Vec<String> = bundle
        .stages
        .iter()
        .filter(|(_, s)| matches!(s, StageStatus::Failed(_)))
        .map(|(n, s)| format!("stage {n} {}", s.label()))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::StagesFailed(failed.join("\n")))
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            EXIT_STAGE
        }
        Err(Failure::StagesFailed(m)) => {
            eprintln!("{m}");
            EXIT_STAGE
        }
    }
}
