use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DriverId, Row};
use crate::netkernels::Tensor;
use crate::{Error, Result};

pub const WINDOW_SIZE: usize = 16;
pub const WINDOW_STEP: usize = 8;
pub const BATCH_SIZE: usize = 4;

/// `size` consecutive seconds of one driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub driver: DriverId,
    pub start_time: i64,
    /// Stride the window was cut with; consecutive windows start this far apart.
    pub step: usize,
    pub size: usize,
    pub n_features: usize,
    /// `size x n_features`, row-major.
    pub values: Vec<f64>,
}

impl Window {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_features..(t + 1) * self.n_features]
    }
}

/// Consecutive same-driver windows: the authenticator's decision unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub driver: DriverId,
    pub windows: Vec<Window>,
}

impl Batch {
    pub fn n_features(&self) -> usize {
        self.windows[0].n_features
    }

    pub fn start_time(&self) -> i64 {
        self.windows[0].start_time
    }

    /// Seconds of driving covered: `(windows - 1) * step + size`.
    pub fn span(&self) -> usize {
        let w = &self.windows[0];
        (self.windows.len() - 1) * w.step + w.size
    }

    /// Distinct seconds covered by the batch, oldest first.
    pub fn timeline(&self) -> Vec<Vec<f64>> {
        let w0 = &self.windows[0];
        (0..self.span())
            .map(|t| {
                let i = (t / w0.step).min(self.windows.len() - 1);
                self.windows[i].row(t - i * w0.step).to_vec()
            })
            .collect()
    }

    /// Rebuilds a batch from a timeline of `(n - 1) * step + size` rows.
    pub fn from_timeline(
        driver: DriverId,
        start_time: i64,
        rows: &[Vec<f64>],
        size: usize,
        step: usize,
        n_windows: usize,
    ) -> Result<Batch> {
        let span = (n_windows - 1) * step + size;
        if rows.len() != span {
            return Err(Error::Shape(format!(
                "timeline has {} rows, batch needs {span}",
                rows.len()
            )));
        }
        let n_features = rows[0].len();
        let windows = (0..n_windows)
            .map(|i| Window {
                driver,
                start_time: start_time + (i * step) as i64,
                step,
                size,
                n_features,
                values: rows[i * step..i * step + size].concat(),
            })
            .collect();
        Ok(Batch { driver, windows })
    }

    /// `[windows, size, features]` model input.
    pub fn to_tensor(&self) -> Tensor {
        windows_to_tensor(&self.windows)
    }
}

pub fn windows_to_tensor(ws: &[Window]) -> Tensor {
    let w0 = &ws[0];
    let data = ws.iter().flat_map(|w| w.values.iter().copied()).collect();
    Tensor::from_vec(&[ws.len(), w0.size, w0.n_features], data).expect("uniform windows")
}

/// Number of windows in a contiguous segment of `n` seconds.
pub fn window_count(n: usize, size: usize, step: usize) -> usize {
    if n < size {
        0
    } else {
        (n - size) / step + 1
    }
}

/// Contiguous runs of rows (same driver, one-second cadence).
pub fn segments(rows: &[Row]) -> Vec<&[Row]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        let brk = i == rows.len()
            || rows[i].driver != rows[i - 1].driver
            || rows[i].time != rows[i - 1].time + 1;
        if brk {
            if i > start {
                out.push(&rows[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Sliding windows over each contiguous per-driver segment.
pub fn make_windows(ds: &Dataset, size: usize, step: usize) -> Vec<Window> {
    assert!(
        size > 0 && step > 0,
        "window size and step must be positive"
    );
    let nf = ds.n_features();
    let mut out = Vec::new();
    for seg in segments(&ds.rows) {
        for k in 0..window_count(seg.len(), size, step) {
            let rows = &seg[k * step..k * step + size];
            out.push(Window {
                driver: rows[0].driver,
                start_time: rows[0].time,
                step,
                size,
                n_features: nf,
                values: rows.iter().flat_map(|r| r.values.iter().copied()).collect(),
            });
        }
    }
    out
}

/// Groups consecutive same-driver windows into non-overlapping batches. A
/// run that does not fill a batch is discarded.
pub fn make_batches(ws: &[Window], batch_size: usize) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut out = Vec::new();
    let mut run: Vec<Window> = Vec::new();
    for w in ws {
        let consecutive = run.last().is_some_and(|p: &Window| {
            p.driver == w.driver && p.step == w.step && w.start_time == p.start_time + p.step as i64
        });
        if !consecutive {
            run.clear();
        }
        run.push(w.clone());
        if run.len() == batch_size {
            out.push(Batch {
                driver: w.driver,
                windows: std::mem::take(&mut run),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(lens: &[usize]) -> Dataset {
        let mut rows = Vec::new();
        for (d, &n) in lens.iter().enumerate() {
            for t in 0..n {
                rows.push(Row {
                    driver: d,
                    time: t as i64,
                    values: vec![(d * 1000 + t) as f64, 0.5],
                });
            }
        }
        Dataset {
            feature_names: vec!["a".into(), "b".into()],
            driver_labels: lens.iter().map(|_| "x".to_string()).collect(),
            rows,
            dropped: vec![],
            norm_stats: None,
        }
    }

    /// Brute-force count: every start offset whose window fits.
    fn enumerate_windows(n: usize, size: usize, step: usize) -> usize {
        (0..n).step_by(step).filter(|s| s + size <= n).count()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ds(&[16]), 16, 8).len(), 1);
        assert_eq!(make_windows(&ds(&[15]), 16, 8).len(), 0);
        assert_eq!(enumerate_windows(9438, 16, 8), 1178);
        assert_eq!(window_count(9438, 16, 8), 1178);
        assert_eq!(make_windows(&ds(&[9438]), 16, 8).len(), 1178);
    }

    #[test]
    fn batch_counts() {
        let ws = make_windows(&ds(&[9438]), 16, 8);
        assert_eq!(make_batches(&ws, 4).len(), 1178 / 4);
        assert_eq!(make_batches(&ws, 4).len(), 294);
        assert_eq!(make_batches(&ws[..3], 4).len(), 0);
    }

    #[test]
    fn no_mixed_driver_batches() {
        // two windows from each of two drivers
        let ws = make_windows(&ds(&[24, 24]), 16, 8);
        assert_eq!(ws.len(), 4);
        assert_eq!(make_batches(&ws, 4).len(), 0);
    }

    #[test]
    fn batch_spans_forty_seconds_and_timeline_roundtrips() {
        let ws = make_windows(&ds(&[200]), WINDOW_SIZE, WINDOW_STEP);
        for b in make_batches(&ws, BATCH_SIZE) {
            assert_eq!(b.span(), 40);
            let tl = b.timeline();
            assert_eq!(tl.len(), 40);
            for (i, row) in tl.iter().enumerate() {
                assert_eq!(row[0], (b.start_time() + i as i64) as f64);
            }
            let back = Batch::from_timeline(b.driver, b.start_time(), &tl, 16, 8, 4).unwrap();
            assert_eq!(back, b);
        }
    }

    proptest! {
        #[test]
        fn window_formula_matches_enumeration(n in 0usize..200) {
            prop_assert_eq!(window_count(n, 16, 8), enumerate_windows(n, 16, 8));
            prop_assert_eq!(make_windows(&ds(&[n]), 16, 8).len(), enumerate_windows(n, 16, 8));
        }
    }
}
