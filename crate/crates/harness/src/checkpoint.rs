//! Versioned binary checkpoints.
//!
//! Layout, little-endian: magic `CCKPT\0`, `u32` version, `u64` length of a
//! JSON header (model kind, dims, model config, normalization, manifest
//! hash), the header, `u64` tensor count, then per tensor a `u32` name
//! length, the UTF-8 name, a `u32` rank, `u64` dims and `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use courtcast::data::NormStats;
use courtcast::models::{build, Dims, Forecaster, ModelConfig, ModelKind};
use courtcast::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 6] = b"CCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: ModelKind,
    pub dims: Dims,
    pub config: ModelConfig,
    pub norm: NormStats,
    pub manifest_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn of(model: &dyn Forecaster, config: &ModelConfig, norm: &NormStats, manifest_hash: &str) -> Self {
        Checkpoint {
            header: Header {
                kind: model.kind(),
                dims: model.dims(),
                config: config.clone(),
                norm: norm.clone(),
                manifest_hash: manifest_hash.to_string(),
            },
            tensors: model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn model(&self) -> Result<Box<dyn Forecaster>> {
        let h = &self.header;
        let mut m = build(h.kind, &h.config, h.dims, 0)?;
        m.params_mut().load(&self.tensors)?;
        Ok(m)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 6];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}, expected {VERSION}"));
        }
        let len = read_u64(input)? as usize;
        let header: Header = serde_json::from_slice(&read_bytes(input, len)?).map_err(|e| e.to_string())?;
        let count = read_u64(input)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = read_u32(input)? as usize;
            let name = String::from_utf8(read_bytes(input, n)?).map_err(|e| e.to_string())?;
            let rank = read_u32(input)? as usize;
            let shape = (0..rank).map(|_| read_u64(input).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = read_bytes(input, numel * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(&shape, data).map_err(|e| e.to_string())?));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?);
        self.write_to(&mut f).and_then(|_| f.flush()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Checkpoint::read_from(&mut std::io::BufReader::new(f)).map_err(|message| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> std::result::Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf).map_err(|e| e.to_string())?;
    if buf.len() != n {
        return Err(format!("truncated: wanted {n} bytes, got {}", buf.len()));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    Ok(u64::from_le_bytes(read_bytes(r, 8)?.try_into().unwrap()))
}
