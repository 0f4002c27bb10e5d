use std::io::Write;

use drivauth::dataio::{
    filter_constant_features, load_dataset, make_batches, make_windows, normalize, split,
    synth_dataset, window_count, Schema, SplitSpec, BATCH_SIZE, CONSTANT_COLUMNS, WINDOW_SIZE,
    WINDOW_STEP,
};
use proptest::prelude::*;

#[test]
fn csv_export_of_synthetic_data_loads_back() {
    let raw = synth_dataset(3, 50, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("drive.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    let mut header: Vec<String> = raw.feature_names.clone();
    header.extend([
        "Time(s)".to_string(),
        "Class".to_string(),
        "PathOrder".to_string(),
    ]);
    writeln!(f, "{}", header.join(",")).unwrap();
    for r in &raw.rows {
        let mut cells: Vec<String> = r.values.iter().map(|v| format!("{v:?}")).collect();
        cells.extend([
            r.time.to_string(),
            raw.driver_labels[r.driver].clone(),
            "1".to_string(),
        ]);
        writeln!(f, "{}", cells.join(",")).unwrap();
    }
    drop(f);
    let back = load_dataset(&path, &Schema::ocslab()).unwrap();
    assert_eq!(back, raw);
}

#[test]
fn ocslab_shape_pipeline() {
    let raw = synth_dataset(10, 500, 1);
    assert_eq!(raw.feature_names.len(), 54);
    let ds = filter_constant_features(&raw).unwrap();
    assert_eq!(ds.n_features(), 46);
    assert_eq!(ds.dropped, CONSTANT_COLUMNS.to_vec());
    let s = split(&ds, &SplitSpec::default(), 3).unwrap();
    for d in 0..10 {
        assert_eq!(s.train.rows_of(d).count(), 425);
        assert_eq!(s.val.rows_of(d).count(), 25);
        assert_eq!(s.test.rows_of(d).count(), 50);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn normalized_training_data_is_unit_bounded(seed in any::<u64>(), drivers in 2usize..5) {
        let ds = filter_constant_features(&synth_dataset(drivers, 120, seed)).unwrap();
        let s = split(&ds, &SplitSpec::default(), seed).unwrap();
        let (train, stats) = normalize(&s.train, None);
        for r in &train.rows {
            prop_assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // Test data is clamped into the training range.
        let (test, _) = normalize(&s.test, Some(&stats));
        for r in &test.rows {
            prop_assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn windows_and_batches_follow_the_counting_formula(secs in 16usize..300) {
        let ds = filter_constant_features(&synth_dataset(2, secs, 4)).unwrap();
        let ws = make_windows(&ds, WINDOW_SIZE, WINDOW_STEP);
        let per_driver = window_count(secs, WINDOW_SIZE, WINDOW_STEP);
        prop_assert_eq!(ws.len(), 2 * per_driver);
        let bs = make_batches(&ws, BATCH_SIZE);
        prop_assert_eq!(bs.len(), 2 * (per_driver / BATCH_SIZE));
        for b in &bs {
            prop_assert!(b.windows.iter().all(|w| w.driver == b.driver));
            prop_assert_eq!(b.span(), 40);
        }
    }
}
