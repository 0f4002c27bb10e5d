use std::path::Path;

use super::bus::{AttackerTap, Bus, EcuNode, SECOND_US};
use super::frame::{CanFrame, SignalMap, Writer};
use crate::dataio::SafetyTaxonomy;
use crate::{Error, Result};

/// Everything fixed about a simulated vehicle: which signals exist, how
/// they map to ids, and what the attacker is allowed to overwrite.
#[derive(Clone, Debug)]
pub struct DriveSetup {
    pub features: Vec<String>,
    pub map: SignalMap,
    pub taxonomy: SafetyTaxonomy,
    pub enforce_safety: bool,
    /// Attach a sniffing tap even when nothing is injected.
    pub sniff: bool,
}

/// Attacker overwrites: `rows[k][c]` replaces column `c` of second `k` for
/// every `c` in `columns`.
#[derive(Clone, Copy, Debug)]
pub struct Forgery<'a> {
    pub rows: &'a [Vec<f64>],
    pub columns: &'a [usize],
}

#[derive(Clone, Debug, Default)]
pub struct DriveRecord {
    /// What the authenticator saw, one row per second.
    pub samples: Vec<Vec<f64>>,
    /// Everything the tap observed, in delivery order.
    pub sniff_log: Vec<CanFrame>,
}

/// Replays `legit` through the vehicle's ECUs at 1 Hz, optionally with an
/// attacker injecting `forgery`, and samples the bus state at every second
/// boundary.
pub fn run_drive(
    setup: &DriveSetup,
    legit: &[Vec<f64>],
    forgery: Option<Forgery<'_>>,
) -> Result<DriveRecord> {
    let ecu = EcuNode::new(&setup.features, &setup.map)?;
    let mut bus = Bus::new();
    let tap = (setup.sniff || forgery.is_some()).then(|| {
        bus.attach_tap(AttackerTap::new(
            setup.taxonomy.clone(),
            setup.enforce_safety,
        ))
    });
    if let Some(f) = forgery {
        if f.rows.len() != legit.len() {
            return Err(Error::Shape(format!(
                "{} forged rows for {} seconds of driving",
                f.rows.len(),
                legit.len()
            )));
        }
    }
    let mut samples = Vec::with_capacity(legit.len());
    for (k, row) in legit.iter().enumerate() {
        let k = k as u64;
        for frame in ecu.frames_for_period(0, k, row) {
            bus.enqueue(frame)?;
        }
        let tick = (k + 1) * SECOND_US;
        if let (Some(f), Some(tap)) = (forgery, tap) {
            for &c in f.columns {
                let value = f.rows[k as usize][c];
                bus.inject(tap, &setup.map, &setup.features[c], value, tick)?;
            }
        }
        bus.step(tick)?;
        samples.push(bus.sample_state(&setup.features)?);
    }
    let sniff_log = match tap {
        Some(t) => bus.tap_mut(t).take_sniff_log(),
        None => Vec::new(),
    };
    Ok(DriveRecord { samples, sniff_log })
}

/// Rebuilds 1 Hz samples from a sniff log: the value of each signal as it
/// stood at every second boundary. Seconds before every signal has been
/// seen once are skipped.
pub fn reconstruct_samples(log: &[CanFrame], features: &[String]) -> Vec<Vec<f64>> {
    let mut last: Vec<Option<f64>> = vec![None; features.len()];
    let index: std::collections::HashMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let mut out = Vec::new();
    let mut second = match log.first() {
        Some(f) => f.emit_time_us / SECOND_US,
        None => return out,
    };
    let flush = |last: &[Option<f64>], out: &mut Vec<Vec<f64>>| {
        if last.iter().all(Option::is_some) {
            out.push(last.iter().map(|v| v.unwrap()).collect());
        }
    };
    for frame in log {
        let s = frame.emit_time_us / SECOND_US;
        while second < s {
            flush(&last, &mut out);
            second += 1;
        }
        if let Some(&i) = index.get(frame.signal.as_str()) {
            last[i] = Some(frame.value);
        }
    }
    flush(&last, &mut out);
    out
}

/// Writes `time_us,can_id,signal,value,writer` rows.
pub fn write_sniff_log(log: &[CanFrame], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_us", "can_id", "signal", "value", "writer"])?;
    for f in log {
        w.write_record([
            f.emit_time_us.to_string(),
            format!("{:#05x}", f.id),
            f.signal.clone(),
            f.value.to_string(),
            f.writer.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sniff_log(path: &Path) -> Result<Vec<CanFrame>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::MalformedRow {
            row: i + 1,
            reason: format!("bad {what}"),
        };
        let field = |k: usize| rec.get(k).unwrap_or("");
        let id_text = field(1);
        let id =
            u32::from_str_radix(id_text.trim_start_matches("0x"), 16).map_err(|_| bad("can_id"))?;
        out.push(CanFrame::new(
            id,
            field(2),
            field(3).parse().map_err(|_| bad("value"))?,
            field(0).parse().map_err(|_| bad("time_us"))?,
            Writer::parse(field(4)).ok_or_else(|| bad("writer"))?,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::default_feature_names;

    fn setup(sniff: bool) -> DriveSetup {
        DriveSetup {
            features: default_feature_names(),
            map: SignalMap::default_ocslab(),
            taxonomy: SafetyTaxonomy::default_ocslab(),
            enforce_safety: true,
            sniff,
        }
    }

    fn rows(n: usize, base: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| {
                (0..46)
                    .map(|f| base + (t * 46 + f) as f64 * 0.001)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn replay_round_trips() {
        let legit = rows(5, 0.0);
        let rec = run_drive(&setup(true), &legit, None).unwrap();
        assert_eq!(rec.samples, legit);
        assert_eq!(
            reconstruct_samples(&rec.sniff_log, &setup(true).features),
            legit
        );
    }

    #[test]
    fn injection_on_non_modifiable_is_refused() {
        let s = setup(false);
        let legit = rows(2, 0.0);
        let forged = rows(2, 5.0);
        let speed = s
            .features
            .iter()
            .position(|f| f == "Vehicle speed")
            .unwrap();
        let res = run_drive(
            &s,
            &legit,
            Some(Forgery {
                rows: &forged,
                columns: &[speed],
            }),
        );
        assert!(matches!(res, Err(Error::SafetyViolation { .. })));
    }

    #[test]
    fn sniff_log_csv_round_trips() {
        let rec = run_drive(&setup(true), &rows(2, 0.25), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_sniff_log(&rec.sniff_log, &path).unwrap();
        assert_eq!(read_sniff_log(&path).unwrap(), rec.sniff_log);
    }
}
