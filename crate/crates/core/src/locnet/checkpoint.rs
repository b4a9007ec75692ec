//! Checkpoint container.
//!
//! ```text
//! magic "LNCK" | version u16 (=1) | header_len u32 | header (UTF-8 JSON) | blobs
//! ```
//!
//! The header holds the model spec (including per-layer `frozen` flags), the
//! training metadata and a blob table. Each blob entry names its layer
//! (1-based), `weight` or `bias`, its shape, and its byte offset/length
//! within the blob section. Blobs are raw little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{param_shapes, LayerParams, Model};
use super::spec::ModelSpec;
use super::LocnetError;

pub const MAGIC: &[u8; 4] = b"LNCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epochs_run: usize,
    pub final_val_loss: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    meta: CheckpointMeta,
    blobs: Vec<BlobEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = Vec::new();
        let mut offset = 0;
        for ((i, p), (wshape, nbias)) in self.model.params().iter().enumerate().zip(param_shapes(self.spec())) {
            if p.is_empty() {
                continue;
            }
            for (name, shape, len) in [("weight", wshape, p.weight.len()), ("bias", vec![nbias], p.bias.len())] {
                blobs.push(BlobEntry {
                    layer: i + 1,
                    name: name.to_string(),
                    shape,
                    offset,
                    bytes: len * 4,
                });
                offset += len * 4;
            }
        }
        let header = Header {
            spec: self.spec().clone(),
            meta: self.meta.clone(),
            blobs,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(10 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            for v in p.weight.iter().chain(&p.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LocnetError> {
        let fmt = |m: String| LocnetError::Format(m);
        if bytes.len() < 10 {
            return Err(fmt(format!("{} bytes is shorter than the fixed header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic, expected \"LNCK\"".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = bytes
            .get(10..10 + header_len)
            .ok_or_else(|| fmt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| fmt(format!("header: {e}")))?;
        let blob_section = &bytes[10 + header_len..];

        let shapes = param_shapes(&header.spec);
        let mut params: Vec<LayerParams<f32>> = vec![LayerParams::default(); shapes.len()];
        let mut expected_offset = 0;
        for entry in &header.blobs {
            let read = |e: &BlobEntry| -> Result<Vec<f32>, LocnetError> {
                let raw = blob_section
                    .get(e.offset..e.offset + e.bytes)
                    .ok_or_else(|| fmt(format!("blob layer {} {} out of range", e.layer, e.name)))?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect())
            };
            if entry.layer == 0 || entry.layer > params.len() || entry.offset != expected_offset || entry.bytes % 4 != 0
            {
                return Err(fmt(format!("bad blob entry {entry:?}")));
            }
            expected_offset += entry.bytes;
            let values = read(entry)?;
            let (wshape, nbias) = &shapes[entry.layer - 1];
            let p = &mut params[entry.layer - 1];
            match entry.name.as_str() {
                "weight" if &entry.shape == wshape => p.weight = values,
                "bias" if entry.shape == [*nbias] => p.bias = values,
                _ => return Err(fmt(format!("blob {entry:?} does not match the spec"))),
            }
        }
        if expected_offset != blob_section.len() {
            return Err(fmt(format!(
                "blob section is {} bytes, table covers {expected_offset}",
                blob_section.len()
            )));
        }
        let model = Model::from_parts(header.spec, params)?;
        Ok(Self {
            model,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LocnetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocnetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model: Model<f32> = Model::build(ModelSpec::micro(), 3).unwrap();
        model.set_frozen(0, true);
        model.set_frozen(1, true);
        let ck = Checkpoint::new(
            model,
            CheckpointMeta {
                epochs_run: 7,
                final_val_loss: Some(0.123_456_789),
                seed: 3,
                config_hash: "abc".into(),
            },
        );
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.spec().frozen_prefix(), 2);
    }

    #[test]
    fn rejects_truncated_blobs() {
        let ck = Checkpoint::new(Model::build(ModelSpec::micro(), 1).unwrap(), CheckpointMeta::default());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(b"LNCX\x01\x00").is_err());
    }
}
