//! Dataset ingestion, feature filtering, normalization, windowing, splits
//! and the per-feature safety taxonomy.

mod dataset;
mod synth;
mod taxonomy;
mod window;

pub use dataset::{
    filter_constant_features, load_dataset, normalize, read_dataset, split, Dataset, DriverId,
    NormStats, RawDataset, Row, Schema, SplitSpec, Splits,
};
pub use synth::{synth_dataset, synth_dataset_with, SynthSeparation, CONSTANT_COLUMNS};
pub use taxonomy::{
    canonical_name, default_feature_names, load_taxonomy, SafetyClass, SafetyTaxonomy,
};
pub use window::{
    make_batches, make_windows, segments, window_count, windows_to_tensor, Batch, Window,
    BATCH_SIZE, WINDOW_SIZE, WINDOW_STEP,
};
