//! Binary checkpoint format.
//!
//! ```text
//! "PINNLLC1"                      8 bytes
//! header length                   u32, little-endian
//! header                          UTF-8 JSON: architecture, seed, iteration, parameter count
//! parameters                      f64 little-endian, in layout order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, MlpArchitecture, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PINNLLC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: MlpArchitecture,
    pub seed: u64,
    pub iteration: usize,
    pub params: ParamVector,
    /// Hash of the configuration that produced the run, if any.
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: MlpArchitecture,
    seed: u64,
    iteration: usize,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            architecture: self.arch.clone(),
            seed: self.seed,
            iteration: self.iteration,
            param_count: self.params.len(),
            config_hash: self.config_hash.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing PINNLLC1 magic"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        if header.param_count != param_count(&header.architecture) {
            return Err(bad("parameter count does not match architecture"));
        }
        let payload = &bytes[12 + header_len..];
        if payload.len() != 8 * header.param_count {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                8 * header.param_count,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params =
            ParamVector::new(&header.architecture, values).map_err(|e| bad(&e.to_string()))?;
        Ok(Checkpoint {
            arch: header.architecture,
            seed: header.seed,
            iteration: header.iteration,
            params,
            config_hash: header.config_hash,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Conventional file name, `ckpt_<iteration>.bin`.
    pub fn file_name(iteration: usize) -> String {
        format!("ckpt_{iteration}.bin")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, mlp_forward};
    use proptest::prelude::*;

    #[test]
    fn rejects_foreign_bytes() {
        let p = Path::new("x.bin");
        assert!(Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0", p).is_err());
        let arch = MlpArchitecture::space_time(&[3]).unwrap();
        let ck = Checkpoint {
            arch: arch.clone(),
            seed: 1,
            iteration: 2,
            params: init_params(&arch, 1),
            config_hash: None,
        };
        let mut bytes = ck.to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes, p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(hidden in proptest::collection::vec(1usize..12, 0..3), seed in any::<u64>(), iteration in 0usize..1_000_000, x in 0.0f64..2.0, t in 0.0f64..2.0) {
            let arch = MlpArchitecture::space_time(&hidden).unwrap();
            let ck = Checkpoint { arch: arch.clone(), seed, iteration, params: init_params(&arch, seed), config_hash: Some("abc".into()) };
            let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &ck);
            let a = mlp_forward(&arch, &ck.params, x, t).unwrap();
            let b = mlp_forward(&back.arch, &back.params, x, t).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
