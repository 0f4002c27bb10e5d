use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::experiment::{GeneratorRun, ReportBundle};
use crate::{Error, Result};

/// Every file [`emit_reports`] may write, in emission order.
pub const REPORT_FILES: [&str; 10] = [
    "baseline.csv",
    "training_history.csv",
    "gb1_asr_grid.csv",
    "gb1_control_grid.csv",
    "gb2_asr.csv",
    "bb1_sweep.csv",
    "bb2_convergence.csv",
    "steal_time.csv",
    "campaigns.csv",
    "summary.txt",
];

/// Bump when a report file changes layout.
const REPORT_VERSION: u32 = 1;

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

struct Table {
    text: String,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            text: header.join(",") + "\n",
        }
    }

    fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        let cells: Vec<&str> = cells.iter().map(AsRef::as_ref).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn grid(drivers: &[String], m: &[Vec<f64>]) -> String {
    let mut header = vec!["attacker\\victim"];
    header.extend(drivers.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for (a, row) in m.iter().enumerate() {
        let mut cells = vec![drivers[a].clone()];
        cells.extend(row.iter().map(|&x| num(x)));
        t.row(&cells);
    }
    t.text
}

fn generator_table(drivers: &[String], runs: &[GeneratorRun]) -> String {
    let mut t = Table::new(&[
        "target",
        "attacker",
        "convergence_episode",
        "episodes_run",
        "queries",
        "asr",
    ]);
    for r in runs {
        t.row(&[
            drivers[r.target].clone(),
            drivers[r.attacker].clone(),
            opt(r.convergence_episode),
            r.episodes_run.to_string(),
            r.queries.to_string(),
            num(r.asr),
        ]);
    }
    t.text
}

/// Writes the bundle's CSV tables and `summary.txt` into `out_dir`. Tables
/// whose stage produced nothing are not written. Apart from the
/// `generated_at_unix` line of the summary, the output is a pure function of
/// the bundle.
pub fn emit_reports(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let drivers = &bundle.drivers;
    let mut written = Vec::new();

    if !bundle.baseline.is_empty() {
        let mut t = Table::new(&["model", "accuracy", "f1", "batches"]);
        for s in &bundle.baseline {
            t.row(&[
                s.model.clone(),
                num(s.accuracy),
                num(s.f1),
                s.batches.to_string(),
            ]);
        }
        write(out_dir, "baseline.csv", &t.text, &mut written)?;
    }
    if !bundle.training.is_empty() {
        let mut t = Table::new(&["model", "epoch", "train_loss", "val_accuracy"]);
        for (model, hist) in &bundle.training {
            for r in hist {
                t.row(&[
                    model.clone(),
                    r.epoch.to_string(),
                    num(r.train_loss),
                    num(r.val_accuracy),
                ]);
            }
        }
        write(out_dir, "training_history.csv", &t.text, &mut written)?;
    }
    if let Some(g) = &bundle.gb1 {
        write(
            out_dir,
            "gb1_asr_grid.csv",
            &grid(drivers, &g.asr),
            &mut written,
        )?;
        write(
            out_dir,
            "gb1_control_grid.csv",
            &grid(drivers, &g.control),
            &mut written,
        )?;
    }
    if !bundle.gb2.is_empty() {
        write(
            out_dir,
            "gb2_asr.csv",
            &generator_table(drivers, &bundle.gb2),
            &mut written,
        )?;
    }
    if !bundle.bb1.is_empty() {
        let mut t = Table::new(&["fraction", "asr", "campaigns"]);
        for p in &bundle.bb1 {
            t.row(&[num(p.fraction), num(p.asr), p.campaigns.to_string()]);
        }
        write(out_dir, "bb1_sweep.csv", &t.text, &mut written)?;
    }
    if !bundle.bb2.is_empty() {
        let mut t = Table::new(&["driver", "episode", "queries"]);
        for r in &bundle.bb2 {
            t.row(&[
                drivers[r.target].clone(),
                opt(r.convergence_episode),
                r.queries.to_string(),
            ]);
        }
        write(out_dir, "bb2_convergence.csv", &t.text, &mut written)?;
    }
    if !bundle.steal_time.is_empty() {
        let mut t = Table::new(&[
            "scenario",
            "setup_min",
            "data_min",
            "training_min",
            "total_min",
        ]);
        for (s, tm) in &bundle.steal_time {
            t.row(&[
                s.to_string(),
                num(tm.setup_min),
                num(tm.data_min),
                num(tm.training_min),
                num(tm.total_min),
            ]);
        }
        write(out_dir, "steal_time.csv", &t.text, &mut written)?;
    }
    if !bundle.campaigns.is_empty() {
        let mut t = Table::new(&[
            "scenario",
            "attacker",
            "victim",
            "asr",
            "fooled",
            "sent",
            "convergence_episode",
            "setup_min",
            "data_min",
            "training_min",
            "total_min",
            "alarms",
            "attacker_frames",
            "unsafe_attacker_frames",
        ]);
        for c in &bundle.campaigns {
            t.row(&[
                c.scenario.to_string(),
                drivers[c.attacker].clone(),
                drivers[c.victim].clone(),
                num(c.asr),
                c.fooled.to_string(),
                c.sent.to_string(),
                opt(c.convergence_episode),
                num(c.timing.setup_min),
                num(c.timing.data_min),
                num(c.timing.training_min),
                num(c.timing.total_min),
                c.alarms.to_string(),
                c.attacker_frames.to_string(),
                c.unsafe_attacker_frames.to_string(),
            ]);
        }
        write(out_dir, "campaigns.csv", &t.text, &mut written)?;
    }

    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write(out_dir, "summary.txt", &summary(bundle, now), &mut written)?;
    Ok(written)
}

/// `key = value` lines; `generated_at_unix` is the only run-dependent one.
pub(crate) fn summary(bundle: &ReportBundle, generated_at_unix: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "report_version = {REPORT_VERSION}");
    let _ = writeln!(s, "generated_at_unix = {generated_at_unix}");
    let _ = writeln!(s, "seed = {}", bundle.seed);
    let _ = writeln!(s, "drivers = {}", bundle.drivers.len());
    for (name, status) in &bundle.stages {
        let _ = writeln!(s, "stage.{name} = {}", status.label());
    }
    for m in &bundle.baseline {
        let _ = writeln!(s, "baseline.{}.accuracy = {}", m.model, num(m.accuracy));
        let _ = writeln!(s, "baseline.{}.f1 = {}", m.model, num(m.f1));
    }
    if let Some(g) = &bundle.gb1 {
        let _ = writeln!(s, "gb1.mean_asr = {}", num(g.mean()));
        let _ = writeln!(s, "gb1.control_mean_asr = {}", num(g.control_mean()));
    }
    if !bundle.gb2.is_empty() {
        let converged = bundle
            .gb2
            .iter()
            .filter(|r| r.convergence_episode.is_some())
            .count();
        let _ = writeln!(s, "gb2.converged = {converged}/{}", bundle.gb2.len());
        let mean = bundle.gb2.iter().map(|r| r.asr).sum::<f64>() / bundle.gb2.len() as f64;
        let _ = writeln!(s, "gb2.mean_asr = {}", num(mean));
    }
    if !bundle.bb1.is_empty() {
        let n = bundle.bb1.len() as f64;
        let mean = bundle.bb1.iter().map(|p| p.asr).sum::<f64>() / n;
        let var = bundle
            .bb1
            .iter()
            .map(|p| (p.asr - mean).powi(2))
            .sum::<f64>()
            / n;
        let _ = writeln!(s, "bb1.mean_asr = {}", num(mean));
        let _ = writeln!(s, "bb1.std_asr = {}", num(var.sqrt()));
    }
    if let Some(x) = bundle.bb1_single {
        let _ = writeln!(s, "bb1.single_batch_asr = {}", num(x));
    }
    if !bundle.bb2.is_empty() {
        let converged = bundle
            .bb2
            .iter()
            .filter(|r| r.convergence_episode.is_some())
            .count();
        let _ = writeln!(s, "bb2.converged = {converged}/{}", bundle.bb2.len());
        let _ = writeln!(
            s,
            "bb2.mean_convergence_episode = {}",
            opt(bundle.bb2_mean_convergence().map(num))
        );
    }
    for (sc, t) in &bundle.steal_time {
        let _ = writeln!(s, "steal_time.{} = {}", sc.as_str(), num(t.total_min));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bundle_writes_only_the_summary() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&ReportBundle::default(), dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("summary.txt")]);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains("generated_at_unix = "));
    }
}
