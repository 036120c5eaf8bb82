//! Checkpoint container: magic, version, JSON header, then little-endian
//! f32 payloads in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamTensor, UNetConfig, UNetParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BEADNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    tensors: Vec<TensorEntry>,
    /// Adam first and second moments follow the parameters when present.
    has_moments: bool,
    #[serde(default)]
    extra: Option<serde_json::Value>,
}

/// Parameters plus optional optimizer moments and opaque trainer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: UNetParams<f32>,
    pub moments: Option<(UNetParams<f32>, UNetParams<f32>)>,
    pub extra: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn params_only(params: UNetParams<f32>) -> Self {
        Self {
            params,
            moments: None,
            extra: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let header = Header {
            config: p.config,
            tensors: p
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            has_moments: self.moments.is_some(),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 12 * p.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut sets = vec![p];
        if let Some((m, v)) = &self.moments {
            sets.push(m);
            sets.push(v);
        }
        for set in sets {
            for t in &set.tensors {
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let json_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(16..16 + json_len)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut cursor = 16 + json_len;

        let mut read_set = |what: &str| -> Result<UNetParams<f32>> {
            let mut tensors = Vec::with_capacity(header.tensors.len());
            for e in &header.tensors {
                let n: usize = e.shape.iter().product();
                let raw = bytes.get(cursor..cursor + 4 * n).ok_or_else(|| {
                    Error::Checkpoint(format!("tensor `{}` ({what}) is truncated", e.name))
                })?;
                cursor += 4 * n;
                tensors.push(ParamTensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                });
            }
            let set = UNetParams {
                config: header.config,
                tensors,
            };
            set.validate()?;
            Ok(set)
        };
        let params = read_set("parameters")?;
        let moments = if header.has_moments {
            let m = read_set("first moment")?;
            let v = read_set("second moment")?;
            Some((m, v))
        } else {
            None
        };
        if cursor != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - cursor
            )));
        }
        Ok(Self {
            params,
            moments,
            extra: header.extra,
        })
    }

    /// Atomic write through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Load only the parameters of a checkpoint.
pub fn load_params(path: &Path) -> Result<UNetParams<f32>> {
    Checkpoint::load(path).map(|c| c.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> UNetParams<f32> {
        UNetParams::init(UNetConfig::tiny(2, 16, 4), 1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = params();
        let ck = Checkpoint {
            params: p.clone(),
            moments: Some((p.zeros_like(), p.clone())),
            extra: Some(serde_json::json!({"step": 3})),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let plain = Checkpoint::params_only(p);
        assert_eq!(
            Checkpoint::from_bytes(&plain.to_bytes().unwrap()).unwrap(),
            plain
        );
    }

    #[test]
    fn errors_name_the_offending_tensor() {
        let mut p = params();
        p.tensors[3].shape = vec![99];
        p.tensors[3].data = vec![0.0; 99];
        let err =
            Checkpoint::from_bytes(&Checkpoint::params_only(p).to_bytes().unwrap()).unwrap_err();
        assert!(err.to_string().contains("enc0.norm1.beta"), "{err}");

        let mut p = params();
        p.tensors[5].data[0] = f32::NAN;
        let err =
            Checkpoint::from_bytes(&Checkpoint::params_only(p).to_bytes().unwrap()).unwrap_err();
        assert!(err.to_string().contains("enc0.conv2.bias"), "{err}");

        let bytes = Checkpoint::params_only(params()).to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("head.bias"), "{err}");
        assert!(Checkpoint::from_bytes(b"garbage-file-contents").is_err());
    }
}
