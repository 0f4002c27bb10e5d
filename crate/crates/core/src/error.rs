use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    // dataio
    #[error("no rows")]
    NoRows,
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("unknown driver label {label:?} at row {row}")]
    UnknownDriver { row: usize, label: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("all feature columns are constant")]
    AllConstant,
    #[error("split fractions must sum to 1 (got {0})")]
    BadSplit(f64),
    #[error("taxonomy: feature {0:?} is missing")]
    TaxonomyMissing(String),
    #[error("taxonomy: feature {0:?} is listed more than once")]
    TaxonomyDuplicate(String),
    #[error("taxonomy: unknown feature {0:?}")]
    TaxonomyUnknown(String),
    #[error("taxonomy line {line}: {reason}")]
    TaxonomyParse { line: usize, reason: String },

    // netkernels
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("invalid epsilon {0}")]
    InvalidEpsilon(f64),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    // authenticator
    #[error("need >=2 classes (got {0})")]
    TooFewClasses(usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("feature count mismatch: model expects {expected}, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("ensemble needs exactly 3 members over one class set: {0}")]
    BadEnsemble(String),

    // canbus
    #[error("time regression: bus at {now} us, asked to step to {until} us")]
    TimeRegression { now: u64, until: u64 },
    #[error("cold bus: signal {0:?} has not been written yet")]
    ColdBus(String),
    #[error("safety violation: {signal:?} is {class} and cannot be injected")]
    SafetyViolation { signal: String, class: String },
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("can id {0:#x} outside the 11-bit range")]
    BadCanId(u32),
    #[error("signal map line {line}: {reason}")]
    SignalMapParse { line: usize, reason: String },

    // attacks
    #[error("empty attack data: {0}")]
    EmptyAttackData(String),
    #[error("sniff log too short: {seconds} s collected, one batch needs {needed} s")]
    SniffTooShort { seconds: usize, needed: usize },
    #[error("latent length {got}, generator expects {expected}")]
    LatentLength { expected: usize, got: usize },
    #[error("oracle mode does not allow {0}")]
    OracleMode(&'static str),
    #[error("scenario {scenario} is missing {missing}")]
    ScenarioInputs { scenario: String, missing: String },

    // harness
    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
