use std::collections::BTreeMap;

use super::frame::{CanFrame, SignalMap, Writer};
use crate::dataio::{SafetyClass, SafetyTaxonomy};
use crate::{Error, Result};

pub const SECOND_US: u64 = 1_000_000;
/// How long before a sampling tick the attacker schedules its frames.
pub const DEFAULT_GUARD_US: u64 = 1_000;

/// Most recent value of every signal seen on the bus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BusState {
    last: BTreeMap<String, (f64, Writer, u64)>,
}

impl BusState {
    pub fn get(&self, signal: &str) -> Option<(f64, Writer, u64)> {
        self.last.get(signal).copied()
    }

    pub fn len(&self) -> usize {
        self.last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_empty()
    }
}

/// A node publishing a fixed set of signals once per period, each at its own
/// offset into the period.
#[derive(Clone, Debug)]
pub struct EcuNode {
    signals: Vec<(String, u16)>,
    offsets_us: Vec<u64>,
    period_us: u64,
}

impl EcuNode {
    /// Signals are staggered 15 ms apart, so a full 46-signal cycle ends well
    /// before the guard interval preceding the next tick.
    pub fn new(signals: &[String], map: &SignalMap) -> Result<Self> {
        let signals = signals
            .iter()
            .map(|s| Ok((s.clone(), map.id_of(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let offsets_us = (0..signals.len() as u64)
            .map(|i| 10_000 + 15_000 * i)
            .collect();
        Ok(EcuNode {
            signals,
            offsets_us,
            period_us: SECOND_US,
        })
    }

    pub fn signals(&self) -> impl Iterator<Item = &str> {
        self.signals.iter().map(|(s, _)| s.as_str())
    }

    /// Frames for period `k` starting at `base_us`, carrying `values` in
    /// signal order.
    pub fn frames_for_period(&self, base_us: u64, k: u64, values: &[f64]) -> Vec<CanFrame> {
        assert_eq!(
            values.len(),
            self.signals.len(),
            "one value per owned signal"
        );
        self.signals
            .iter()
            .zip(&self.offsets_us)
            .zip(values)
            .map(|(((name, id), off), &v)| CanFrame {
                id: *id,
                signal: name.clone(),
                value: v,
                emit_time_us: base_us + k * self.period_us + off,
                writer: Writer::Legit,
            })
            .collect()
    }
}

/// A malicious node: records everything it sees and schedules injections
/// just ahead of sampling ticks.
#[derive(Clone, Debug)]
pub struct AttackerTap {
    taxonomy: SafetyTaxonomy,
    pub enforce_safety: bool,
    pub guard_us: u64,
    sniff_log: Vec<CanFrame>,
}

impl AttackerTap {
    pub fn new(taxonomy: SafetyTaxonomy, enforce_safety: bool) -> Self {
        AttackerTap {
            taxonomy,
            enforce_safety,
            guard_us: DEFAULT_GUARD_US,
            sniff_log: Vec::new(),
        }
    }

    pub fn sniff_log(&self) -> &[CanFrame] {
        &self.sniff_log
    }

    pub fn take_sniff_log(&mut self) -> Vec<CanFrame> {
        std::mem::take(&mut self.sniff_log)
    }

    /// Builds the attacker frame that overwrites `signal` right before the
    /// sampling tick at `tick_us`. Under safety enforcement only modifiable
    /// signals are allowed.
    pub fn schedule(
        &self,
        map: &SignalMap,
        signal: &str,
        value: f64,
        tick_us: u64,
    ) -> Result<CanFrame> {
        if self.enforce_safety {
            let class = self
                .taxonomy
                .class_of(signal)
                .ok_or_else(|| Error::UnknownSignal(signal.to_string()))?;
            if class != SafetyClass::Modifiable {
                return Err(Error::SafetyViolation {
                    signal: signal.to_string(),
                    class: class.to_string(),
                });
            }
        }
        Ok(CanFrame {
            id: map.id_of(signal)?,
            signal: signal.to_string(),
            value,
            emit_time_us: tick_us.saturating_sub(self.guard_us),
            writer: Writer::Attacker,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapId(usize);

/// Discrete-event bus with zero transmission time. Frames are delivered in
/// emit-time order; frames pending at the same instant go out in
/// arbitration order.
#[derive(Clone, Debug, Default)]
pub struct Bus {
    now_us: u64,
    seq: u64,
    queue: BTreeMap<(u64, u16, String, u64), CanFrame>,
    state: BusState,
    taps: Vec<AttackerTap>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn state(&self) -> &BusState {
        &self.state
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn attach_tap(&mut self, tap: AttackerTap) -> TapId {
        self.taps.push(tap);
        TapId(self.taps.len() - 1)
    }

    pub fn tap(&self, id: TapId) -> &AttackerTap {
        &self.taps[id.0]
    }

    pub fn tap_mut(&mut self, id: TapId) -> &mut AttackerTap {
        &mut self.taps[id.0]
    }

    pub fn enqueue(&mut self, frame: CanFrame) -> Result<()> {
        if frame.emit_time_us < self.now_us {
            return Err(Error::TimeRegression {
                now: self.now_us,
                until: frame.emit_time_us,
            });
        }
        let key = (frame.emit_time_us, frame.id, frame.signal.clone(), self.seq);
        self.seq += 1;
        self.queue.insert(key, frame);
        Ok(())
    }

    /// Schedules an attacker overwrite of `signal` for the tick at `tick_us`
    /// through tap `tap`.
    pub fn inject(
        &mut self,
        tap: TapId,
        map: &SignalMap,
        signal: &str,
        value: f64,
        tick_us: u64,
    ) -> Result<()> {
        let frame = self.taps[tap.0].schedule(map, signal, value, tick_us)?;
        self.enqueue(frame)
    }

    /// Delivers every frame emitted before `until_us`, in order.
    pub fn step(&mut self, until_us: u64) -> Result<Vec<CanFrame>> {
        if until_us < self.now_us {
            return Err(Error::TimeRegression {
                now: self.now_us,
                until: until_us,
            });
        }
        let mut delivered = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 >= until_us {
                break;
            }
            let frame = entry.remove();
            self.state.last.insert(
                frame.signal.clone(),
                (frame.value, frame.writer, frame.emit_time_us),
            );
            for tap in &mut self.taps {
                tap.sniff_log.push(frame.clone());
            }
            delivered.push(frame);
        }
        self.now_us = until_us;
        Ok(delivered)
    }

    /// Current value of each of `signals`.
    pub fn sample_state(&self, signals: &[String]) -> Result<Vec<f64>> {
        signals
            .iter()
            .map(|s| {
                self.state
                    .get(s)
                    .map(|(v, _, _)| v)
                    .ok_or_else(|| Error::ColdBus(s.clone()))
            })
            .collect()
    }
}
