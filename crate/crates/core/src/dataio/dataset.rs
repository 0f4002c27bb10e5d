use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::stage_rng;
use crate::{Error, Result};

pub type DriverId = usize;

/// One second of driving for one driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub driver: DriverId,
    /// Seconds. Strictly increasing within a driver; a gap larger than one
    /// second starts a new contiguous segment.
    pub time: i64,
    pub values: Vec<f64>,
}

/// Dataset as ingested, before feature filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    /// Source label for each dense driver id.
    pub driver_labels: Vec<String>,
    /// Sorted by `(driver, time)`.
    pub rows: Vec<Row>,
}

impl RawDataset {
    pub fn n_drivers(&self) -> usize {
        self.driver_labels.len()
    }
}

/// Column mapping for CSV ingestion.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    pub driver_column: String,
    /// Seconds column. Absent: rows are numbered 0, 1, ... per driver.
    pub time_column: Option<String>,
    /// Feature columns in order. Absent: every other column, in header order.
    pub feature_columns: Option<Vec<String>>,
    /// Columns ignored when `feature_columns` is absent.
    pub ignore_columns: Vec<String>,
    /// Accepted driver labels, mapped to ids in this order. Absent: every
    /// label seen, sorted.
    pub driver_labels: Option<Vec<String>>,
}

impl Schema {
    /// OCSLab layout: `Class` holds the driver, `Time(s)` the second and
    /// `PathOrder` is bookkeeping.
    pub fn ocslab() -> Self {
        Schema {
            driver_column: "Class".into(),
            time_column: Some("Time(s)".into()),
            feature_columns: None,
            ignore_columns: vec!["PathOrder".into()],
            driver_labels: None,
        }
    }
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let driver_col = col(&schema.driver_column)?;
    let time_col = schema.time_column.as_deref().map(col).transpose()?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&i| i != driver_col && Some(i) != time_col)
            .filter(|&i| !schema.ignore_columns.contains(&header[i]))
            .collect(),
    };
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut parsed: Vec<(String, Option<f64>, Vec<f64>)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::MalformedRow {
                row: row_no,
                reason: format!("column {:?}: {:?} is not a number", header[i], &rec[i]),
            })
        };
        let time = time_col.map(num).transpose()?;
        let values = feature_cols
            .iter()
            .map(|&i| num(i))
            .collect::<Result<Vec<_>>>()?;
        parsed.push((rec[driver_col].to_string(), time, values));
    }
    if parsed.is_empty() {
        return Err(Error::NoRows);
    }

    let labels: Vec<String> = match &schema.driver_labels {
        Some(l) => l.clone(),
        None => {
            let mut l: Vec<String> = parsed.iter().map(|p| p.0.clone()).collect();
            l.sort();
            l.dedup();
            l
        }
    };
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    // Per-driver clocks: keep source gaps, but restart-after-trip rows are
    // shifted so time stays strictly increasing with a segment break.
    let mut last: Vec<Option<(f64, i64)>> = vec![None; labels.len()];
    let mut counters = vec![0i64; labels.len()];
    let mut rows = Vec::with_capacity(parsed.len());
    for (idx, (label, time, values)) in parsed.into_iter().enumerate() {
        let driver = *index
            .get(label.as_str())
            .ok_or_else(|| Error::UnknownDriver {
                row: idx + 1,
                label: label.clone(),
            })?;
        let t = match time {
            None => {
                counters[driver] += 1;
                counters[driver] - 1
            }
            Some(src) => {
                let mapped = match last[driver] {
                    None => src.round() as i64,
                    Some((prev_src, prev_t)) if src > prev_src => {
                        prev_t + ((src - prev_src).round() as i64).max(1)
                    }
                    Some((_, prev_t)) => prev_t + 2,
                };
                last[driver] = Some((src, mapped));
                mapped
            }
        };
        rows.push(Row {
            driver,
            time: t,
            values,
        });
    }
    rows.sort_by_key(|r| (r.driver, r.time));
    Ok(RawDataset {
        feature_names,
        driver_labels: labels,
        rows,
    })
}

/// Per-feature min/max from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn compute(rows: &[Row], n_features: usize) -> Self {
        let mut min = vec![f64::INFINITY; n_features];
        let mut max = vec![f64::NEG_INFINITY; n_features];
        for r in rows {
            for (f, &v) in r.values.iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
            }
        }
        NormStats { min, max }
    }

    /// Maps into `[0, 1]`, clamping values outside the training range. A
    /// feature that was constant in the training data maps to 0.
    pub fn apply(&self, f: usize, v: f64) -> f64 {
        let range = self.max[f] - self.min[f];
        if range <= 0.0 {
            return 0.0;
        }
        ((v - self.min[f]) / range).clamp(0.0, 1.0)
    }

    /// Normalized level of a raw value, unclamped.
    pub fn level_of(&self, f: usize, v: f64) -> f64 {
        let range = self.max[f] - self.min[f];
        if range <= 0.0 {
            0.0
        } else {
            (v - self.min[f]) / range
        }
    }
}

/// Filtered dataset: no constant columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub driver_labels: Vec<String>,
    pub rows: Vec<Row>,
    /// Columns removed by [`filter_constant_features`].
    pub dropped: Vec<String>,
    /// Present once the dataset has been normalized.
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_drivers(&self) -> usize {
        self.driver_labels.len()
    }

    pub fn rows_of(&self, driver: DriverId) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.driver == driver)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        let want = super::taxonomy::canonical_name(name);
        self.feature_names
            .iter()
            .position(|n| super::taxonomy::canonical_name(n) == want)
    }

    fn with_rows(&self, rows: Vec<Row>) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            driver_labels: self.driver_labels.clone(),
            rows,
            dropped: self.dropped.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }
}

/// Drops every column whose value never changes over all rows.
pub fn filter_constant_features(raw: &RawDataset) -> Result<Dataset> {
    if raw.rows.is_empty() {
        return Err(Error::NoRows);
    }
    let n = raw.feature_names.len();
    let first = &raw.rows[0].values;
    let varying: Vec<bool> = (0..n)
        .map(|f| raw.rows.iter().any(|r| r.values[f] != first[f]))
        .collect();
    if !varying.iter().any(|&v| v) {
        return Err(Error::AllConstant);
    }
    let keep: Vec<usize> = (0..n).filter(|&f| varying[f]).collect();
    let dropped = (0..n)
        .filter(|&f| !varying[f])
        .map(|f| raw.feature_names[f].clone())
        .collect();
    let rows = raw
        .rows
        .iter()
        .map(|r| Row {
            driver: r.driver,
            time: r.time,
            values: keep.iter().map(|&f| r.values[f]).collect(),
        })
        .collect();
    Ok(Dataset {
        feature_names: keep.iter().map(|&f| raw.feature_names[f].clone()).collect(),
        driver_labels: raw.driver_labels.clone(),
        rows,
        dropped,
        norm_stats: None,
    })
}

/// Min-max normalization. Without `stats`, they are computed from `ds`
/// (training data); otherwise the given stats are applied.
pub fn normalize(ds: &Dataset, stats: Option<&NormStats>) -> (Dataset, NormStats) {
    let stats = stats
        .cloned()
        .unwrap_or_else(|| NormStats::compute(&ds.rows, ds.n_features()));
    let rows = ds
        .rows
        .iter()
        .map(|r| Row {
            driver: r.driver,
            time: r.time,
            values: r
                .values
                .iter()
                .enumerate()
                .map(|(f, &v)| stats.apply(f, v))
                .collect(),
        })
        .collect();
    let mut out = ds.with_rows(rows);
    out.norm_stats = Some(stats.clone());
    (out, stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.85,
            val_frac: 0.05,
            test_frac: 0.10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_frac + self.val_frac + self.test_frac;
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if (sum - 1.0).abs() > 1e-9 || fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::BadSplit(sum));
        }
        Ok(())
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Contiguous time blocks per driver. Each driver's timeline is cut into a
/// train, a validation and a test block of the requested sizes; the seed
/// picks the order of the three blocks along the timeline.
pub fn split(ds: &Dataset, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let mut by_driver: BTreeMap<DriverId, Vec<&Row>> = BTreeMap::new();
    for r in &ds.rows {
        by_driver.entry(r.driver).or_default().push(r);
    }
    let mut rng = stage_rng(seed, "split");
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for rows in by_driver.values() {
        let n = rows.len();
        let n_train = ((n as f64) * spec.train_frac).round() as usize;
        let n_val = (((n as f64) * spec.val_frac).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;
        let mut order = [(0usize, n_train), (1, n_val), (2, n_test)];
        order.shuffle(&mut rng);
        let mut at = 0;
        for (which, len) in order {
            let block = rows[at..at + len].iter().map(|r| (*r).clone());
            match which {
                0 => train.extend(block),
                1 => val.extend(block),
                _ => test.extend(block),
            }
            at += len;
        }
    }
    Ok(Splits {
        train: ds.with_rows(train),
        val: ds.with_rows(val),
        test: ds.with_rows(test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_from(cols: Vec<Vec<f64>>) -> RawDataset {
        let n = cols[0].len();
        RawDataset {
            feature_names: (0..cols.len()).map(|i| format!("f{i}")).collect(),
            driver_labels: vec!["a".into()],
            rows: (0..n)
                .map(|t| Row {
                    driver: 0,
                    time: t as i64,
                    values: cols.iter().map(|c| c[t]).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn hand_written_csv_is_echoed() {
        let csv = "x,y,Class\n1.5,2,A\n-3,4.25,B\n5,6,A\n";
        let schema = Schema {
            driver_column: "Class".into(),
            ..Default::default()
        };
        let raw = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!(raw.feature_names, vec!["x", "y"]);
        assert_eq!(raw.n_drivers(), 2);
        let vals: Vec<(usize, i64, Vec<f64>)> = raw
            .rows
            .iter()
            .map(|r| (r.driver, r.time, r.values.clone()))
            .collect();
        assert_eq!(
            vals,
            vec![
                (0, 0, vec![1.5, 2.0]),
                (0, 1, vec![5.0, 6.0]),
                (1, 0, vec![-3.0, 4.25]),
            ]
        );
    }

    #[test]
    fn empty_file_has_no_rows() {
        let schema = Schema {
            driver_column: "Class".into(),
            ..Default::default()
        };
        assert!(matches!(
            read_dataset("x,Class\n".as_bytes(), &schema),
            Err(Error::NoRows)
        ));
    }

    #[test]
    fn malformed_row_reports_index() {
        let schema = Schema {
            driver_column: "Class".into(),
            ..Default::default()
        };
        let err = read_dataset("x,Class\n1,A\nzz,A\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_driver_label() {
        let schema = Schema {
            driver_column: "Class".into(),
            driver_labels: Some(vec!["A".into()]),
            ..Default::default()
        };
        let err = read_dataset("x,Class\n1,A\n2,Q\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::UnknownDriver { row: 2, .. }));
    }

    #[test]
    fn trip_restart_becomes_a_segment_break() {
        let csv = "Time(s),x,Class\n1,0.1,A\n2,0.2,A\n1,0.3,A\n2,0.4,A\n";
        let raw = read_dataset(csv.as_bytes(), &Schema::ocslab()).unwrap();
        let times: Vec<i64> = raw.rows.iter().map(|r| r.time).collect();
        assert_eq!(times, vec![1, 2, 4, 5]);
    }

    #[test]
    fn constant_columns_are_dropped() {
        // column-variance scan: columns 1 and 3 never change
        let raw = ds_from(vec![
            vec![1.0, 2.0, 3.0],
            vec![7.0, 7.0, 7.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![5.0, 4.0, 5.0],
        ]);
        let ds = filter_constant_features(&raw).unwrap();
        assert_eq!(ds.feature_names, vec!["f0", "f2", "f4"]);
        assert_eq!(ds.dropped, vec!["f1", "f3"]);
        assert_eq!(ds.rows[2].values, vec![3.0, 1.0, 5.0]);
    }

    #[test]
    fn no_constant_columns_is_identity() {
        let raw = ds_from(vec![vec![1.0, 2.0], vec![3.0, 1.0]]);
        let ds = filter_constant_features(&raw).unwrap();
        assert_eq!(ds.rows, raw.rows);
        assert!(ds.dropped.is_empty());
    }

    #[test]
    fn all_constant_is_an_error() {
        let raw = ds_from(vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(
            filter_constant_features(&raw),
            Err(Error::AllConstant)
        ));
    }

    #[test]
    fn min_max_hand_arithmetic_and_clamp() {
        let ds = filter_constant_features(&ds_from(vec![vec![2.0, 4.0, 6.0]])).unwrap();
        let (n, stats) = normalize(&ds, None);
        let col: Vec<f64> = n.rows.iter().map(|r| r.values[0]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);

        let (again, _) = normalize(&n, Some(&NormStats::compute(&n.rows, 1)));
        assert_eq!(again.rows, n.rows);

        let test = filter_constant_features(&ds_from(vec![vec![9.0, 1.0]])).unwrap();
        let (t, _) = normalize(&test, Some(&stats));
        assert_eq!(t.rows[0].values[0], 1.0);
        assert_eq!(t.rows[1].values[0], 0.0);
    }

    fn counted(n: usize) -> Dataset {
        let mut rows = Vec::new();
        for d in 0..2 {
            for t in 0..n {
                rows.push(Row {
                    driver: d,
                    time: t as i64,
                    values: vec![t as f64],
                });
            }
        }
        Dataset {
            feature_names: vec!["x".into()],
            driver_labels: vec!["a".into(), "b".into()],
            rows,
            dropped: vec![],
            norm_stats: None,
        }
    }

    #[test]
    fn split_counts_per_driver() {
        let s = split(&counted(1000), &SplitSpec::default(), 3).unwrap();
        for d in 0..2 {
            assert_eq!(s.train.rows_of(d).count(), 850);
            assert_eq!(s.val.rows_of(d).count(), 50);
            assert_eq!(s.test.rows_of(d).count(), 100);
        }
    }

    #[test]
    fn split_blocks_are_contiguous() {
        let s = split(&counted(1000), &SplitSpec::default(), 11).unwrap();
        for part in [&s.val, &s.test] {
            for d in 0..2 {
                let t: Vec<i64> = part.rows_of(d).map(|r| r.time).collect();
                assert!(t.windows(2).all(|w| w[1] == w[0] + 1));
            }
        }
    }

    #[test]
    fn split_everything_to_train() {
        let spec = SplitSpec {
            train_frac: 1.0,
            val_frac: 0.0,
            test_frac: 0.0,
        };
        let s = split(&counted(100), &spec, 0).unwrap();
        assert_eq!(s.train.rows.len(), 200);
        assert!(s.val.rows.is_empty() && s.test.rows.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_validates() {
        let a = split(&counted(300), &SplitSpec::default(), 5).unwrap();
        let b = split(&counted(300), &SplitSpec::default(), 5).unwrap();
        assert_eq!(a.test.rows, b.test.rows);
        let bad = SplitSpec {
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.2,
        };
        assert!(matches!(
            split(&counted(10), &bad, 0),
            Err(Error::BadSplit(_))
        ));
    }
}
