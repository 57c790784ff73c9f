//! Parameter checkpoint serialization.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  b"MSNNCKPT"
//! version u16      currently 1
//! count   u32      number of parameter records
//! then per record:
//!   name_len u32, name utf-8 bytes
//!   ndim     u8,  dims u32 * ndim
//!   values   f32 * prod(dims), little-endian, C (row-major) order
//! ```
//!
//! Values are stored as f32 regardless of the in-memory float width.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::optim::ParamStore;
use crate::real::Real;
use crate::{NnError, Result};

const MAGIC: &[u8; 8] = b"MSNNCKPT";
const VERSION: u16 = 1;

pub struct Checkpoint {
    pub entries: Vec<(String, ArrayD<f32>)>,
}

pub fn to_bytes<F: Real>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.tensor_count() as u32).to_le_bytes());
    for (name, var) in store.iter() {
        let value = var.value();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(value.ndim() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(NnError::CheckpointFormat(format!(
                "truncated at byte {} (wanted {} more)",
                pos, n
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(NnError::CheckpointFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(NnError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|e| NnError::CheckpointFormat(format!("bad name: {e}")))?
            .to_string();
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = dims.iter().product();
        let raw = take(&mut pos, 4 * len)?;
        let mut values = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), values)
            .map_err(|e| NnError::CheckpointFormat(e.to_string()))?;
        entries.push((name, arr));
    }
    if pos != bytes.len() {
        return Err(NnError::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(Checkpoint { entries })
}

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

impl Checkpoint {
    /// Restores every entry into `store`; names and shapes must match
    /// exactly and every store parameter must be present.
    pub fn apply_all<F: Real>(&self, store: &mut ParamStore<F>) -> Result<()> {
        if self.entries.len() != store.tensor_count() {
            return Err(NnError::CheckpointFormat(format!(
                "checkpoint has {} tensors, store has {}",
                self.entries.len(),
                store.tensor_count()
            )));
        }
        for (name, values) in &self.entries {
            store.set_value(name, values.mapv(|v| F::from_f64(v as f64)))?;
        }
        Ok(())
    }

    /// Restores entries whose names exist in `store` (partial weight
    /// loading, e.g. a pre-trained encoder). Returns how many loaded.
    pub fn apply_matching<F: Real>(&self, store: &mut ParamStore<F>) -> Result<usize> {
        let names: std::collections::HashSet<String> = store.names().into_iter().collect();
        let mut loaded = 0;
        for (name, values) in &self.entries {
            if names.contains(name) {
                store.set_value(name, values.mapv(|v| F::from_f64(v as f64)))?;
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}
