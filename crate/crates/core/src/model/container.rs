//! Self-describing parameter container: magic, version, JSON header
//! describing named tensors, then the raw little-endian tensor data in
//! header order. The same format carries float checkpoints and quantized
//! models; the `meta` value distinguishes them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

const MAGIC: &[u8; 4] = b"EVGM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorRecord {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    I8 { shape: Vec<usize>, data: Vec<i8> },
    I32 { shape: Vec<usize>, data: Vec<i32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl TensorRecord {
    fn dtype(&self) -> &'static str {
        match self {
            TensorRecord::F32 { .. } => "f32",
            TensorRecord::I8 { .. } => "i8",
            TensorRecord::I32 { .. } => "i32",
            TensorRecord::U8 { .. } => "u8",
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            TensorRecord::F32 { shape, .. } => shape,
            TensorRecord::I8 { shape, .. } => shape,
            TensorRecord::I32 { shape, .. } => shape,
            TensorRecord::U8 { shape, .. } => shape,
        }
    }

    fn element_count(&self) -> usize {
        match self {
            TensorRecord::F32 { data, .. } => data.len(),
            TensorRecord::I8 { data, .. } => data.len(),
            TensorRecord::I32 { data, .. } => data.len(),
            TensorRecord::U8 { data, .. } => data.len(),
        }
    }
}

#[derive(Debug)]
pub struct ContainerPayload {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, TensorRecord)>,
}

#[derive(Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<HeaderTensor>,
}

pub fn write_container(path: &Path, payload: &ContainerPayload) -> Result<(), ModelError> {
    for (name, rec) in &payload.tensors {
        let expected: usize = rec.shape().iter().product();
        if expected != rec.element_count() {
            return Err(ModelError::Container(format!(
                "tensor {name} shape/data mismatch"
            )));
        }
    }
    let header = Header {
        version: VERSION,
        meta: payload.meta.clone(),
        tensors: payload
            .tensors
            .iter()
            .map(|(name, rec)| HeaderTensor {
                name: name.clone(),
                dtype: rec.dtype().to_string(),
                shape: rec.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ModelError::Container(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, rec) in &payload.tensors {
        match rec {
            TensorRecord::F32 { data, .. } => {
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorRecord::I8 { data, .. } => {
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorRecord::I32 { data, .. } => {
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorRecord::U8 { data, .. } => w.write_all(data)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<ContainerPayload, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Container("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(ModelError::Container(format!(
            "unsupported container version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| ModelError::Container(e.to_string()))?;
    if header.version != VERSION {
        return Err(ModelError::Container("header/frame version mismatch".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for ht in header.tensors {
        let count: usize = ht.shape.iter().product();
        let rec = match ht.dtype.as_str() {
            "f32" => {
                let mut buf = vec![0u8; count * 4];
                r.read_exact(&mut buf)?;
                let data = buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                TensorRecord::F32 { shape: ht.shape, data }
            }
            "i8" => {
                let mut buf = vec![0u8; count];
                r.read_exact(&mut buf)?;
                TensorRecord::I8 {
                    shape: ht.shape,
                    data: buf.into_iter().map(|b| b as i8).collect(),
                }
            }
            "i32" => {
                let mut buf = vec![0u8; count * 4];
                r.read_exact(&mut buf)?;
                let data = buf
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                TensorRecord::I32 { shape: ht.shape, data }
            }
            "u8" => {
                let mut buf = vec![0u8; count];
                r.read_exact(&mut buf)?;
                TensorRecord::U8 { shape: ht.shape, data: buf }
            }
            other => {
                return Err(ModelError::Container(format!("unknown dtype {other}")));
            }
        };
        tensors.push((ht.name, rec));
    }
    Ok(ContainerPayload {
        meta: header.meta,
        tensors,
    })
}
