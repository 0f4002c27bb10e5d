use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::canonical_name;
use crate::{Error, Result};

const DEFAULT_SIGNAL_MAP: &str = include_str!("../../config/signal_map.csv");

/// Highest valid 11-bit identifier plus one.
pub const CAN_ID_LIMIT: u32 = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Writer {
    Legit,
    Attacker,
}

impl Writer {
    pub fn as_str(self) -> &'static str {
        match self {
            Writer::Legit => "legit",
            Writer::Attacker => "attacker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "legit" => Some(Writer::Legit),
            "attacker" => Some(Writer::Attacker),
            _ => None,
        }
    }
}

/// One signal value per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanFrame {
    pub id: u16,
    pub signal: String,
    pub value: f64,
    pub emit_time_us: u64,
    pub writer: Writer,
}

impl CanFrame {
    pub fn new(
        id: u32,
        signal: &str,
        value: f64,
        emit_time_us: u64,
        writer: Writer,
    ) -> Result<Self> {
        if id >= CAN_ID_LIMIT {
            return Err(Error::BadCanId(id));
        }
        Ok(CanFrame {
            id: id as u16,
            signal: signal.to_string(),
            value,
            emit_time_us,
            writer,
        })
    }

    /// Arbitration priority: lower id wins, then earlier emit time, then
    /// signal name.
    pub fn priority_key(&self) -> (u16, u64, &str) {
        (self.id, self.emit_time_us, &self.signal)
    }
}

/// Winner of bus arbitration among `pending`, or `None` if nothing is
/// pending.
pub fn arbitrate(pending: &[CanFrame]) -> Option<&CanFrame> {
    pending
        .iter()
        .min_by(|a, b| a.priority_key().cmp(&b.priority_key()))
}

/// Static signal name to CAN id assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMap {
    entries: Vec<(String, u16)>,
    index: HashMap<String, usize>,
}

impl SignalMap {
    /// Parses `signal_name,can_id` lines; ids may be decimal or `0x` hex.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::SignalMapParse {
                line: i + 1,
                reason,
            };
            let (name, id) = line
                .rsplit_once(',')
                .ok_or_else(|| err("expected `signal_name,can_id`".into()))?;
            let id = id.trim();
            let id = match id.strip_prefix("0x").or_else(|| id.strip_prefix("0X")) {
                Some(hex) => u32::from_str_radix(hex, 16),
                None => id.parse(),
            }
            .map_err(|e| err(format!("bad id {id:?}: {e}")))?;
            if id >= CAN_ID_LIMIT {
                return Err(Error::BadCanId(id));
            }
            let name = name.trim().to_string();
            if index.insert(canonical_name(&name), entries.len()).is_some() {
                return Err(err(format!("signal {name:?} listed twice")));
            }
            entries.push((name, id as u16));
        }
        Ok(SignalMap { entries, index })
    }

    pub fn default_ocslab() -> Self {
        Self::parse(DEFAULT_SIGNAL_MAP).expect("shipped signal map parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn id_of(&self, signal: &str) -> Result<u16> {
        self.index
            .get(&canonical_name(signal))
            .map(|&i| self.entries[i].1)
            .ok_or_else(|| Error::UnknownSignal(signal.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fallback map for feature sets without a shipped assignment: ids in
    /// feature order starting at `0x100`.
    pub fn sequential(features: &[String]) -> Self {
        let text: String = features
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{f},{}\n", 0x100 + i))
            .collect();
        Self::parse(&text).expect("generated map parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(id: u32, t: u64, s: &str) -> CanFrame {
        CanFrame::new(id, s, 0.0, t, Writer::Legit).unwrap()
    }

    #[test]
    fn lowest_id_wins() {
        let p = [f(0x100, 0, "a"), f(0x0A0, 5, "b")];
        assert_eq!(arbitrate(&p).unwrap().id, 0x0A0);
        assert_eq!(arbitrate(&p[..1]).unwrap().id, 0x100);
        assert!(arbitrate(&[]).is_none());
    }

    #[test]
    fn equal_ids_fall_back_to_time_then_name() {
        let p = [f(7, 9, "a"), f(7, 3, "z"), f(7, 3, "m")];
        assert_eq!(arbitrate(&p).unwrap().signal, "m");
    }

    #[test]
    fn out_of_range_id() {
        assert!(matches!(
            CanFrame::new(2048, "x", 0.0, 0, Writer::Legit),
            Err(Error::BadCanId(2048))
        ));
    }

    #[test]
    fn shipped_map_covers_taxonomy() {
        let map = SignalMap::default_ocslab();
        assert_eq!(map.len(), 46);
        for name in crate::dataio::default_feature_names() {
            map.id_of(&name).unwrap();
        }
        assert!(matches!(
            map.id_of("Warp drive"),
            Err(Error::UnknownSignal(_))
        ));
    }
}
