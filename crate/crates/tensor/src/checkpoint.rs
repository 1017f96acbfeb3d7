//! Flat parameter container and its binary checkpoint encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SQMTCKPT"
//! version  u32
//! hash     u32 length + UTF-8 bytes (hash of the model configuration)
//! count    u64
//! entries  count × { u32 name length, name bytes, u32 rank,
//!                    rank × u64 dims, numel × f64 }
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Result, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"SQMTCKPT";
const VERSION: u32 = 1;

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter and returns its slot. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Checkpoint(format!("duplicate parameter {name}")));
        }
        let slot = self.tensors.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.tensors.push(value);
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Parameters plus the hash of the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.config_hash)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, t) in self.params.iter() {
            write_str(&mut w, name)?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash = read_str(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(Checkpoint { config_hash, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Checkpoint::read_from(bytes.as_slice())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| TensorError::Checkpoint(e.to_string()))
}
