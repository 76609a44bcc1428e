//! Window cache: `MTLWIN01`, u32 version, u32 header length, JSON header
//! (`n`, `seq_len`, class maps, provenance), then little-endian f32 windows
//! followed by u32 task-1 and task-2 labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MTLWIN01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    seq_len: usize,
    classes1: Vec<String>,
    classes2: Vec<String>,
    provenance: Vec<Provenance>,
}

pub fn save_cache(ds: &WindowedDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.check()?;
    let header = serde_json::to_vec(&Header {
        n: ds.len(),
        seq_len: ds.seq_len(),
        classes1: ds.classes1.clone(),
        classes2: ds.classes2.clone(),
        provenance: ds.provenance.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * (ds.windows.numel() + 2 * ds.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in ds.windows.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in ds.y1.iter().chain(&ds.y2) {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<WindowedDataset> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a window cache".to_string()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let hdr = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Format("truncated cache header".to_string()))?;
    let h: Header = serde_json::from_slice(hdr)?;
    let body = &bytes[16 + hlen..];
    let nf = h.n * 3 * h.seq_len;
    if body.len() != 4 * (nf + 2 * h.n) {
        return Err(Error::Format("cache payload size mismatch".to_string()));
    }
    let words: Vec<[u8; 4]> = body.chunks_exact(4).map(|c| c.try_into().unwrap()).collect();
    let data = words[..nf].iter().map(|w| f32::from_le_bytes(*w)).collect();
    let labels: Vec<usize> = words[nf..].iter().map(|w| u32::from_le_bytes(*w) as usize).collect();
    let ds = WindowedDataset {
        windows: Tensor::new(vec![h.n, 1, 3, h.seq_len], data)?,
        y1: labels[..h.n].to_vec(),
        y2: labels[h.n..].to_vec(),
        provenance: h.provenance,
        classes1: h.classes1,
        classes2: h.classes2,
    };
    ds.check()?;
    Ok(ds)
}
