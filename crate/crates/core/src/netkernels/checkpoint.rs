//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed with correct rounding, so save/load is value-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    payload: T,
}

pub fn to_string<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        payload,
    })?)
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(env.format_version));
    }
    if env.kind != kind {
        return Err(Error::Config(format!(
            "checkpoint holds a {:?}, expected a {kind:?}",
            env.kind
        )));
    }
    Ok(env.payload)
}

pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let text = to_string(kind, payload)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(kind, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netkernels::LayerParams;
    use crate::rng::seeded;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn layer_roundtrip_is_value_exact(seed in any::<u64>(), hidden in 1usize..6) {
            let layers = vec![
                LayerParams::lstm(3, hidden, &mut seeded(seed)),
                LayerParams::gru(2, hidden, &mut seeded(seed ^ 1)),
            ];
            let text = to_string("layers", &layers).unwrap();
            let back: Vec<LayerParams> = from_str("layers", &text).unwrap();
            for (a, b) in layers.iter().zip(&back) {
                for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
                    prop_assert_eq!(ta.shape(), tb.shape());
                    for (x, y) in ta.data().iter().zip(tb.data()) {
                        prop_assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = r#"{"format_version":99,"kind":"layers","payload":[]}"#;
        assert!(matches!(
            from_str::<Vec<LayerParams>>("layers", text),
            Err(Error::CheckpointVersion(99))
        ));
    }
}
