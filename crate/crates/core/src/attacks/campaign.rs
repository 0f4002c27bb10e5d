use std::fmt;

use serde::{Deserialize, Serialize};

use super::generator::{craft_batch, sample_slice, GeneratorTraining, SLICE_SECONDS};
use super::oracle::{OracleMode, DECISION_SECONDS};
use super::replay::{bb1_collect, AsrCount, ModifiableMask};
use crate::authenticator::{authenticate_stream, DecisionPolicy, Ensemble, StreamEvent};
use crate::canbus::{run_drive, DriveSetup, Forgery, Writer};
use crate::dataio::{Batch, DriverId, SafetyClass, BATCH_SIZE, WINDOW_SIZE, WINDOW_STEP};
use crate::rng::stage_rng;
use crate::{Error, Result};

/// Fixed time to fit the device to the vehicle.
pub const SETUP_MINUTES: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Wb,
    Gb1,
    Gb2,
    Bb1,
    Bb2,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Wb,
        Scenario::Gb1,
        Scenario::Gb2,
        Scenario::Bb1,
        Scenario::Bb2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Wb => "wb",
            Scenario::Gb1 => "gb1",
            Scenario::Gb2 => "gb2",
            Scenario::Bb1 => "bb1",
            Scenario::Bb2 => "bb2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s.to_ascii_lowercase())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

/// Simulated minutes an attacker needs, by phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub setup_min: f64,
    pub data_min: f64,
    pub training_min: f64,
    pub total_min: f64,
}

impl Timing {
    /// Setup is fixed; BB1 pays for sniffing in whole minutes; BB2 pays one
    /// decision interval per oracle query. The other scenarios prepare
    /// offline.
    pub fn for_scenario(scenario: Scenario, sniff_seconds: u64, oracle_queries: u64) -> Self {
        let data_min = match scenario {
            Scenario::Bb1 => sniff_seconds.div_ceil(60) as f64,
            _ => 0.0,
        };
        let training_min = match scenario {
            Scenario::Bb2 => (oracle_queries * DECISION_SECONDS) as f64 / 60.0,
            _ => 0.0,
        };
        Timing {
            setup_min: SETUP_MINUTES,
            data_min,
            training_min,
            total_min: SETUP_MINUTES + data_min + training_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub scenario: Scenario,
    pub attacker: DriverId,
    pub victim: DriverId,
    pub fooled: u64,
    pub sent: u64,
    pub asr: f64,
    pub convergence_episode: Option<usize>,
    pub timing: Timing,
    /// Alarms the decision policy raised over the deployed stream.
    pub alarms: usize,
    pub attacker_frames: usize,
    /// Delivered attacker frames carrying a non-modifiable signal.
    pub unsafe_attacker_frames: usize,
}

/// What a campaign has to work with. Which fields are required depends on
/// the scenario.
pub struct AttackInputs<'a> {
    pub ensemble: &'a Ensemble,
    pub drive: &'a DriveSetup,
    pub mask: &'a ModifiableMask,
    pub policy: DecisionPolicy,
    pub attacker: DriverId,
    pub victim: DriverId,
    /// The attacker's own driving during the theft.
    pub attacker_batches: &'a [Batch],
    /// Victim driving data (GB1).
    pub victim_batches: Option<&'a [Batch]>,
    /// Victim driving replayed on the bus while the tap listens (BB1).
    pub sniff_rows: Option<&'a [Vec<f64>]>,
    /// Trained generator (WB, GB2, BB2).
    pub generator: Option<&'a GeneratorTraining>,
    pub seed: u64,
}

fn missing(scenario: Scenario, what: &str) -> Error {
    Error::ScenarioInputs {
        scenario: scenario.to_string(),
        missing: what.into(),
    }
}

/// Drives the attacker's batches on the simulated bus while the tap
/// overwrites the modifiable signals before every sampling tick, then
/// scores what the authenticator saw.
pub fn deploy_attack(scenario: Scenario, inp: &AttackInputs<'_>) -> Result<AttackOutcome> {
    if inp.attacker_batches.is_empty() {
        return Err(Error::EmptyAttackData(
            "no attacker driving to deploy over".into(),
        ));
    }
    let mut sniff_seconds = 0;
    let mut convergence_episode = None;
    let mut queries = 0;
    let replay_source: Option<Vec<Batch>> = match scenario {
        Scenario::Gb1 => Some(
            inp.victim_batches
                .ok_or_else(|| missing(scenario, "victim data"))?
                .to_vec(),
        ),
        Scenario::Bb1 => {
            let rows = inp
                .sniff_rows
                .ok_or_else(|| missing(scenario, "sniffing stage"))?;
            let sniff_setup = DriveSetup {
                sniff: true,
                ..inp.drive.clone()
            };
            let log = run_drive(&sniff_setup, rows, None)?.sniff_log;
            sniff_seconds = rows.len() as u64;
            Some(bb1_collect(&log, &inp.drive.features, inp.victim)?)
        }
        Scenario::Wb | Scenario::Gb2 | Scenario::Bb2 => {
            let training = inp
                .generator
                .ok_or_else(|| missing(scenario, "trained generator"))?;
            let want = if scenario == Scenario::Bb2 {
                OracleMode::LabelOnly
            } else {
                OracleMode::FullProbs
            };
            if training.mode != want {
                return Err(missing(
                    scenario,
                    &format!("a generator trained with {want:?} oracle"),
                ));
            }
            convergence_episode = training.convergence_episode;
            queries = training.queries;
            None
        }
    };

    let mut rng = stage_rng(inp.seed, &format!("deploy/{}", scenario.as_str()));
    let nf = inp.mask.n_features;
    let mut legit = Vec::with_capacity(inp.attacker_batches.len() * SLICE_SECONDS);
    let mut forged = Vec::with_capacity(legit.capacity());
    for (i, ab) in inp.attacker_batches.iter().enumerate() {
        let crafted = match &replay_source {
            Some(victim) => {
                super::replay::smart_replay_merge(ab, &victim[i % victim.len()], inp.mask)?
            }
            None => {
                let g = &inp.generator.expect("checked above").generator;
                craft_batch(ab, &sample_slice(g, &mut rng)?, inp.mask)?
            }
        };
        legit.extend(ab.timeline());
        forged.extend(crafted.timeline());
    }
    debug_assert!(forged.iter().all(|r| r.len() == nf));

    let record = run_drive(
        inp.drive,
        &legit,
        Some(Forgery {
            rows: &forged,
            columns: &inp.mask.columns,
        }),
    )?;
    let mut observed = Vec::with_capacity(inp.attacker_batches.len());
    for (ab, rows) in inp
        .attacker_batches
        .iter()
        .zip(record.samples.chunks(SLICE_SECONDS))
    {
        observed.push(Batch::from_timeline(
            inp.attacker,
            ab.start_time(),
            rows,
            WINDOW_SIZE,
            WINDOW_STEP,
            BATCH_SIZE,
        )?);
    }
    let mut count = AsrCount::default();
    for b in &observed {
        count.record(inp.ensemble.predict_batch(b)?.label == inp.victim);
    }
    let events = authenticate_stream(inp.ensemble, &inp.policy, &observed, inp.victim)?;
    let attacker_frames: Vec<_> = record
        .sniff_log
        .iter()
        .filter(|f| f.writer == Writer::Attacker)
        .collect();
    let unsafe_attacker_frames = attacker_frames
        .iter()
        .filter(|f| inp.drive.taxonomy.class_of(&f.signal) != Some(SafetyClass::Modifiable))
        .count();

    Ok(AttackOutcome {
        scenario,
        attacker: inp.attacker,
        victim: inp.victim,
        fooled: count.fooled,
        sent: count.sent,
        asr: count.rate()?,
        convergence_episode,
        timing: Timing::for_scenario(scenario, sniff_seconds, queries),
        alarms: events.iter().filter(|e| **e == StreamEvent::Alarm).count(),
        attacker_frames: attacker_frames.len(),
        unsafe_attacker_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_timings() {
        assert_eq!(Timing::for_scenario(Scenario::Gb1, 0, 0).total_min, 2.0);
        assert_eq!(Timing::for_scenario(Scenario::Bb1, 40, 0).total_min, 3.0);
        assert_eq!(Timing::for_scenario(Scenario::Bb2, 0, 30).total_min, 22.0);
        assert_eq!(Timing::for_scenario(Scenario::Gb2, 0, 500).total_min, 2.0);
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.as_str()), Some(s));
        }
        assert_eq!(Scenario::parse("BB2"), Some(Scenario::Bb2));
        assert_eq!(Scenario::parse("zz"), None);
    }
}
