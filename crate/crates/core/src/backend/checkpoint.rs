//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/config.json   model configuration
//! <dir>/params.bin    b"ADPT", u64 LE count, then count f64 LE values
//! <dir>/vocab.json    {"tokens": [...]}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::toy::{ToyMlm, ToyMlmConfig};
use super::vocab::Vocab;
use super::ModelBackend;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ADPT";
pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    backend: String,
    toy: ToyMlmConfig,
    param_count: usize,
}

pub fn encode_params(flat: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("parameter blob has no ADPT header".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob declares {count} values but holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn save(model: &ToyMlm, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let flat = model.parameters();
    let config = CheckpointConfig {
        backend: "toy".into(),
        toy: model.config().clone(),
        param_count: flat.len(),
    };
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config)?)?;
    fs::write(dir.join(PARAMS_FILE), encode_params(&flat))?;
    fs::write(dir.join(VOCAB_FILE), model.vocab().to_json()?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ToyMlm> {
    let config: CheckpointConfig = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    if config.backend != "toy" {
        return Err(Error::Checkpoint(format!("unsupported backend `{}`", config.backend)));
    }
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let flat = decode_params(&fs::read(dir.join(PARAMS_FILE))?)?;
    if flat.len() != config.param_count {
        return Err(Error::Checkpoint(format!(
            "config declares {} parameters, blob has {}",
            config.param_count,
            flat.len()
        )));
    }
    let mut model = ToyMlm::new(config.toy, vocab)?;
    model.set_parameters(&flat)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_then_load_is_identical() {
        let config = ToyMlmConfig {
            d: 8,
            layers: 1,
            heads: 2,
            max_len: 16,
            seed: 11,
            ..ToyMlmConfig::default()
        };
        let mut model = ToyMlm::new(config, Vocab::new(["x", "y"])).unwrap();
        model.add_tokens(&["[E1]"], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&model, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), model);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut bytes = encode_params(&[1.0, 2.0]);
        bytes.pop();
        assert!(decode_params(&bytes).is_err());
        assert!(decode_params(b"nope").is_err());
    }
}
