//! Versioned encoder checkpoints: parameters plus the full optimizer state.
//!
//! JSON with round-trip float formatting, so save/load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::optim::AdamState;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: EncoderParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, adam: AdamState) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            params,
            adam,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {} (expected {})",
                ck.version, FORMAT_VERSION
            )));
        }
        ck.params.validate()?;
        ck.adam.validate_for(&ck.params)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamHyper;

    #[test]
    fn roundtrip_is_value_exact() {
        let params = EncoderParams::init(42, &[5, 8, 3]).unwrap();
        let adam = AdamState::new(&params, AdamHyper::default());
        let ck = Checkpoint::new(params, adam);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, loaded);
    }

    #[test]
    fn version_mismatch_rejected() {
        let params = EncoderParams::init(42, &[3, 2]).unwrap();
        let adam = AdamState::new(&params, AdamHyper::default());
        let mut ck = Checkpoint::new(params, adam);
        ck.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Parse(_))));
    }
}
