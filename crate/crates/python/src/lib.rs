use std::path::PathBuf;

use drivauth_core::attacks::Scenario;
use drivauth_core::authenticator::Ensemble;
use drivauth_core::canbus::{self, CanFrame, DriveSetup, Forgery, SignalMap, Writer};
use drivauth_core::dataio::{
    default_feature_names, Batch, SafetyTaxonomy, BATCH_SIZE, WINDOW_SIZE, WINDOW_STEP,
};
use drivauth_core::harness::{self, ConfusionCounts, ExperimentConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(drivauth, DrivauthError, PyException);

fn err(e: drivauth_core::Error) -> PyErr {
    DrivauthError::new_err(e.to_string())
}

/// Converts any serializable value into plain Python objects.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Config", module = "drivauth", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let mut inner = ExperimentConfig::parse(text).map_err(err)?;
        inner.apply_env();
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// Sets one field; unknown keys and invalid values are rejected.
    fn set(&mut self, py: Python<'_>, key: &str, value: Bound<'_, PyAny>) -> PyResult<()> {
        let json: String = py
            .import("json")?
            .call_method1("dumps", (value,))?
            .extract()?;
        let value: serde_json::Value =
            serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let mut all =
            serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        all[key] = value;
        let next: ExperimentConfig = serde_json::from_value(all)
            .map_err(|e| PyValueError::new_err(format!("{key}: {e}")))?;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(dataset={:?}, seed={})",
            self.inner.dataset, self.inner.seed
        )
    }
}

#[pyclass(name = "Ensemble", module = "drivauth", skip_from_py_object)]
#[derive(Clone)]
struct PyEnsemble {
    inner: Ensemble,
}

#[pymethods]
impl PyEnsemble {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ensemble::load(&path)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    /// Classifies one 40-second timeline of normalized rows; returns the
    /// voted label and the mean member probabilities.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<(usize, Vec<f64>)> {
        let batch =
            Batch::from_timeline(0, 0, &rows, WINDOW_SIZE, WINDOW_STEP, BATCH_SIZE).map_err(err)?;
        let p = self.inner.predict_batch(&batch).map_err(err)?;
        Ok((p.label, p.probs))
    }
}

#[pyclass(name = "Experiment", module = "drivauth")]
struct PyExperiment {
    inner: harness::Experiment,
}

fn parse_scenario(name: &str) -> PyResult<Scenario> {
    Scenario::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))
}

#[pymethods]
impl PyExperiment {
    /// Prepares the data and trains the authenticator.
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        py.detach(move || {
            let data = harness::prepare_data(&cfg)?;
            let ensemble = harness::train_ensemble(&cfg, &data)?;
            harness::Experiment::new(cfg, data, ensemble)
        })
        .map(|inner| Self { inner })
        .map_err(err)
    }

    #[getter]
    fn n_drivers(&self) -> usize {
        self.inner.n_drivers()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.data.features().to_vec()
    }

    fn ensemble(&self) -> PyEnsemble {
        PyEnsemble {
            inner: self.inner.ensemble.clone(),
        }
    }

    fn attacker_for(&self, target: usize) -> usize {
        self.inner.attacker_for(target)
    }

    fn test_rows(&self, driver: usize) -> Vec<Vec<f64>> {
        self.inner.data.test_rows(driver)
    }

    fn baseline(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let scores = py.detach(|| self.inner.baseline()).map_err(err)?;
        to_py(py, &scores)
    }

    fn gb1_grid(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let grid = py.detach(|| self.inner.gb1_grid()).map_err(err)?;
        to_py(py, &grid)
    }

    /// Runs one scenario against `victim` on the simulated bus, training a
    /// generator first when the scenario needs one.
    fn attack(&self, py: Python<'_>, scenario: &str, victim: usize) -> PyResult<Py<PyAny>> {
        let s = parse_scenario(scenario)?;
        if victim >= self.inner.n_drivers() {
            return Err(PyValueError::new_err(format!("no driver {victim}")));
        }
        let outcome = py
            .detach(|| {
                let run = match s {
                    Scenario::Wb | Scenario::Gb2 => Some(self.inner.gb2_target(victim)?),
                    Scenario::Bb2 => Some(self.inner.bb2_target(victim)?),
                    Scenario::Gb1 | Scenario::Bb1 => None,
                };
                let generator = run.as_ref().and_then(|r| r.generator.as_ref());
                self.inner.campaign(s, victim, generator)
            })
            .map_err(err)?;
        to_py(py, &outcome)
    }

    /// Runs baseline evaluation and every configured scenario.
    fn run_stages(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let bundle = py.detach(|| harness::run_stages(&self.inner));
        to_py(py, &bundle)
    }
}

/// Runs the full experiment and writes the report files into `out_dir`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    let files = py
        .detach(move || {
            let bundle = harness::run_experiment(&cfg)?;
            harness::emit_reports(&bundle, &out_dir)
        })
        .map_err(err)?;
    Ok(files.into_iter().map(|p| p.display().to_string()).collect())
}

#[pyfunction]
fn asr(fooled: u64, sent: u64) -> PyResult<f64> {
    harness::asr(fooled, sent).map_err(err)
}

#[pyfunction]
fn far(accepted: u64, attempts: u64) -> PyResult<f64> {
    harness::far(accepted, attempts).map_err(err)
}

#[pyfunction]
fn accuracy(tp: u64, tn: u64, fp: u64, fn_: u64) -> PyResult<f64> {
    harness::accuracy(&ConfusionCounts { tp, tn, fp, fn_ }).map_err(err)
}

#[pyfunction]
fn f1(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    harness::f1(&ConfusionCounts { tp, tn, fp, fn_ })
}

/// Index of the frame that wins arbitration among `(id, signal,
/// emit_time_us)` tuples, or None for an empty set.
#[pyfunction]
fn arbitrate(frames: Vec<(u32, String, u64)>) -> PyResult<Option<usize>> {
    let frames = frames
        .iter()
        .map(|(id, s, t)| CanFrame::new(*id, s, 0.0, *t, Writer::Legit))
        .collect::<drivauth_core::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(canbus::arbitrate(&frames).and_then(|w| frames.iter().position(|f| std::ptr::eq(f, w))))
}

/// Drives the 46-signal bus for one row per second and returns what the
/// authenticator samples. `forged` rows overwrite `columns` through the
/// attacker tap.
#[pyfunction]
#[pyo3(signature = (legit, forged=None, columns=None, enforce_safety=true))]
fn simulate_drive(
    py: Python<'_>,
    legit: Vec<Vec<f64>>,
    forged: Option<Vec<Vec<f64>>>,
    columns: Option<Vec<usize>>,
    enforce_safety: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let setup = DriveSetup {
        features: default_feature_names(),
        map: SignalMap::default_ocslab(),
        taxonomy: SafetyTaxonomy::default_ocslab(),
        enforce_safety,
        sniff: false,
    };
    let columns = columns.unwrap_or_default();
    py.detach(|| {
        let forgery = forged.as_ref().map(|rows| Forgery {
            rows,
            columns: &columns,
        });
        canbus::run_drive(&setup, &legit, forgery)
    })
    .map(|rec| rec.samples)
    .map_err(err)
}

#[pymodule]
#[pyo3(name = "drivauth")]
fn drivauth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DrivauthError", m.py().get_type::<DrivauthError>())?;
    m.add(
        "SCENARIOS",
        Scenario::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    )?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(asr, m)?)?;
    m.add_function(wrap_pyfunction!(far, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(arbitrate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_drive, m)?)?;
    Ok(())
}
