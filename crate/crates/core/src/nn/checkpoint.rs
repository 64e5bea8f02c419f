//! Binary checkpoint: `u64` little-endian header length, a JSON header
//! describing the tensors, then every tensor's values as little-endian `f64`
//! in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Parameters;
use crate::nn::tensor::Tensor;

const MAGIC: &str = "skatepose-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(kind: &str, params: &impl Parameters, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            tensors: params
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            meta,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: MAGIC.into(),
            kind: self.kind.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
        let mut out = Vec::with_capacity(8 + json.len());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or_else(|| bad("truncated header length"))?
            .try_into()
            .expect("8 bytes");
        let hlen = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header too large"))?;
        let json = bytes
            .get(8..8usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        if header.format != MAGIC {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        let mut offset = 8 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n = entry.shape[0] * entry.shape[1];
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            tensors.push((entry.name, Tensor::from_vec(entry.shape[0], entry.shape[1], data)?));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies tensors into `params`, requiring identical names and shapes.
    pub fn restore_into(&self, expected_kind: &str, params: &mut impl Parameters) -> Result<()> {
        if self.kind != expected_kind {
            return Err(Error::Checkpoint(format!(
                "expected a {expected_kind} checkpoint, found {}",
                self.kind
            )));
        }
        let names: Vec<(String, [usize; 2])> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors in checkpoint, model has {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, shape), (cname, t)) in names.iter().zip(&self.tensors) {
            if name != cname || *shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: model {name} {shape:?}, checkpoint {cname} {:?}",
                    t.shape()
                )));
            }
        }
        for (dst, (_, src)) in params.tensors_mut().into_iter().zip(&self.tensors) {
            *dst = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{EncoderConfig, EncoderParams};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = EncoderConfig {
            input_dim: 4,
            hidden: vec![3],
            d_pose: 2,
            d_view: 1,
        };
        let enc = EncoderParams::init(&cfg, 7).unwrap();
        let ck = Checkpoint::from_params("encoder", &enc, serde_json::json!({"config": cfg}));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut other = EncoderParams::init(&cfg, 8).unwrap();
        back.restore_into("encoder", &mut other).unwrap();
        assert_eq!(other, enc);
        assert!(back.restore_into("classifier", &mut other).is_err());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        assert!(Checkpoint::from_bytes(&[1, 2, 3]).is_err());
        let enc = EncoderParams::init(&EncoderConfig::for_joints(2), 0).unwrap();
        let mut bytes = Checkpoint::from_params("encoder", &enc, serde_json::Value::Null)
            .to_bytes()
            .unwrap();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
