//! Binary checkpoint: `MTLCKPT1`, u32 version, u32 header length, a JSON
//! header, then every parameter as little-endian f32 in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MtlNetConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MTLCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointRole {
    Student,
    Teacher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    role: CheckpointRole,
    config: MtlNetConfig,
    params: Vec<Entry>,
}

/// A parameter snapshot with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: CheckpointRole,
    pub config: MtlNetConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(role: CheckpointRole, config: MtlNetConfig, params: ParamStore) -> Self {
        Checkpoint {
            role,
            config,
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|(_, p)| {
                let e = Entry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                    offset,
                    len: p.value.numel(),
                };
                offset += e.len;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            role: self.role,
            config: self.config.clone(),
            params,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, p) in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".to_string()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated checkpoint header".to_string()))?;
        let header: Header = serde_json::from_slice(body)?;
        let payload = &bytes[16 + hlen..];
        let mut params = ParamStore::new();
        for e in &header.params {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Format(format!("{}: shape does not match length", e.name)));
            }
            let raw = payload
                .get(4 * e.offset..4 * (e.offset + e.len))
                .ok_or_else(|| Error::Format(format!("{}: payload truncated", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?, e.trainable);
        }
        Ok(Checkpoint {
            role: header.role,
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Copies the stored values into `store`, which must have the same layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if !self.params.congruent(store) {
            return Err(Error::Contract(
                "checkpoint layout does not match the model".to_string(),
            ));
        }
        for ((id, _), (_, p)) in store.clone().iter().zip(self.params.iter()) {
            store.set(id, p.value.clone())?;
        }
        Ok(())
    }
}
