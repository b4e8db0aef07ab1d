//! Binary checkpoint format for network parameters.
//!
//! Layout: the magic string `TSALCKPT1`, a little-endian u32 tensor count,
//! then one table entry per tensor — u16 name length, UTF-8 name, u8 rank,
//! one u32 per dimension, and a u64 byte offset into the payload section —
//! followed by the payload holding each tensor's elements as raw
//! little-endian f32 in row-major order. A human-readable key-value
//! document can be written alongside via [`save_meta`].

use std::collections::HashSet;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::ArrayD;

use crate::{Error, Result};

use super::{Param, Real};

const MAGIC: &[u8; 9] = b"TSALCKPT1";

/// Named tensors in checkpoint order.
pub type CheckpointTensors = Vec<(String, ArrayD<f32>)>;

/// Write named tensors to `path`. Rejects duplicate names and non-finite
/// values: a checkpoint is a claim that training produced usable numbers.
pub fn save_checkpoint(path: &Path, tensors: &CheckpointTensors) -> Result<()> {
    let mut seen = HashSet::new();
    for (name, arr) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate tensor name {name:?}")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!("tensor name too long: {name:?}")));
        }
        if arr.ndim() > u8::MAX as usize {
            return Err(Error::InvalidParameter(format!("tensor rank too high for {name:?}")));
        }
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value in tensor {name:?}")));
        }
    }
    let mut table = Vec::new();
    let mut payload = Vec::new();
    for (name, arr) in tensors {
        table.extend_from_slice(&(name.len() as u16).to_le_bytes());
        table.extend_from_slice(name.as_bytes());
        table.push(arr.ndim() as u8);
        for &d in arr.shape() {
            table.extend_from_slice(&(d as u32).to_le_bytes());
        }
        table.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for &v in arr.as_standard_layout().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(tensors.len() as u32).to_le_bytes())?;
    f.write_all(&table)?;
    f.write_all(&payload)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "truncated: needed {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Read a checkpoint written by [`save_checkpoint`], validating structure
/// end to end.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointTensors> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic string".into()));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::MalformedCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::MalformedCheckpoint(format!("duplicate tensor name {name:?}")));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()? as usize;
        entries.push((name, shape, offset));
    }
    let payload = &buf[r.pos..];
    let mut out = Vec::with_capacity(count);
    for (name, shape, offset) in entries {
        let len: usize = shape.iter().product();
        let end = offset
            .checked_add(len * 4)
            .ok_or_else(|| Error::MalformedCheckpoint("offset overflow".into()))?;
        if end > payload.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "tensor {name:?} extends past end of payload ({end} > {})",
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let b = &payload[offset + 4 * i..offset + 4 * i + 4];
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::MalformedCheckpoint(format!(
                    "non-finite value in tensor {name:?}"
                )));
            }
            data.push(v);
        }
        let arr = ArrayD::from_shape_vec(shape, data)
            .map_err(|e| Error::MalformedCheckpoint(format!("shape error for {name:?}: {e}")))?;
        out.push((name, arr));
    }
    Ok(out)
}

/// Write a human-readable `key = value` document (one pair per line).
pub fn save_meta(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Read a document written by [`save_meta`].
pub fn load_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| {
            Error::MalformedCheckpoint(format!("bad meta line {line:?}"))
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Snapshot a network's parameters as checkpoint tensors (converted to f32).
pub fn snapshot_params<F: Real>(params: Vec<(String, &mut Param<F>)>) -> CheckpointTensors {
    params
        .into_iter()
        .map(|(name, p)| (name, p.value.mapv(|v| v.as_f64() as f32)))
        .collect()
}

/// Load checkpoint tensors into a network's parameters. The tensor set
/// must match the network exactly — same names, same shapes — so a
/// checkpoint can never silently half-load.
pub fn restore_params<F: Real>(
    params: Vec<(String, &mut Param<F>)>,
    tensors: &CheckpointTensors,
) -> Result<()> {
    let by_name: std::collections::HashMap<&str, &ArrayD<f32>> =
        tensors.iter().map(|(n, a)| (n.as_str(), a)).collect();
    if by_name.len() != params.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "expected {} tensors, checkpoint has {}",
            params.len(),
            by_name.len()
        )));
    }
    for (name, p) in params {
        let arr = by_name.get(name.as_str()).ok_or_else(|| {
            Error::MalformedCheckpoint(format!("missing tensor {name:?}"))
        })?;
        if arr.shape() != p.value.shape() {
            return Err(Error::MalformedCheckpoint(format!(
                "shape mismatch for {name:?}: checkpoint {:?}, network {:?}",
                arr.shape(),
                p.value.shape()
            )));
        }
        p.value = arr.mapv(|v| F::of_f64(v as f64));
    }
    Ok(())
}

/// Snapshots a network's parameters and writes them to `path`.
pub fn save_network<F: Real>(path: &Path, params: Vec<(String, &mut Param<F>)>) -> Result<()> {
    save_checkpoint(path, &snapshot_params(params))
}

/// Loads a translator network from a checkpoint.
pub fn load_unet(path: &Path) -> Result<super::UNet<f32>> {
    let mut net = super::UNet::new(0);
    restore_params(net.named_params(), &load_checkpoint(path)?)?;
    Ok(net)
}

/// Loads a noise generator from a checkpoint.
pub fn load_vae(path: &Path) -> Result<super::Vae<f32>> {
    let mut net = super::Vae::new(0);
    restore_params(net.named_params(), &load_checkpoint(path)?)?;
    Ok(net)
}

/// Loads a pose regressor from a checkpoint.
pub fn load_posenet(path: &Path) -> Result<super::PoseNet<f32>> {
    let mut net = super::PoseNet::new(0);
    restore_params(net.named_params(), &load_checkpoint(path)?)?;
    Ok(net)
}
