//! Checkpoint container: named f64 tensors in a flat binary file.
//!
//! Layout, all little-endian:
//!   "SCKP" magic, u16 format version, u32 entry count, then per entry
//!   u32 name length + UTF-8 name, u32 dim count + u32 dims, then
//!   product(dims) f64 values.
//!
//! Entries keep their insertion order, so writing the same logical state
//! twice produces byte-identical files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SCKP";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint entry {0:?} already present")]
    Duplicate(String),
    #[error("checkpoint entry {0:?} missing")]
    Missing(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), CheckpointError> {
        if self.index.contains_key(name) {
            return Err(CheckpointError::Duplicate(name.to_string()));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    /// Store a bare scalar as a one-element tensor.
    pub fn insert_scalar(&mut self, name: &str, value: f64) -> Result<(), CheckpointError> {
        self.insert(name, Tensor::new(vec![1], vec![value]).expect("scalar"))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(CheckpointError::Format(format!(
                "entry {name:?} is not a scalar (shape {:?})",
                t.dims()
            )));
        }
        Ok(t.data()[0])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.entries.len()).unwrap().to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&u32::try_from(bytes.len()).unwrap().to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&u32::try_from(tensor.dims().len()).unwrap().to_le_bytes())?;
            for &d in tensor.dims() {
                w.write_all(&u32::try_from(d).unwrap().to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u16(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version} (reader supports {VERSION})"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| CheckpointError::Format(format!("entry name not UTF-8: {e}")))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u32(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = vec![0.0f64; n];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let tensor = Tensor::new(dims, data)
                .map_err(|e| CheckpointError::Format(format!("entry {name:?}: {e}")))?;
            ckpt.insert(&name, tensor)?;
        }
        Ok(ckpt)
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
