//! Checkpoint container.
//!
//! ```text
//! magic      4 bytes  "NCKP"
//! version    u32      1
//! meta_len   u32      length of the JSON metadata record
//! meta       bytes    {"config": ModelConfig, "extra": {...}}
//! count      u32      number of tensors
//! count × {
//!   name_len u16, name (UTF-8),
//!   dtype    u8       1 = f64
//!   ndim     u8, dims u64 × ndim,
//!   offset   u64      byte offset into the data section
//! }
//! data       raw little-endian values, tensors back to back
//! ```
//! All integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NCKP";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn write<W: Write>(params: &ModelParams, extra: serde_json::Value, mut w: W) -> Result<()> {
    let meta = serde_json::to_vec(&Meta {
        config: params.config.clone(),
        extra,
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for t in &params.tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[DTYPE_F64, t.shape.len() as u8])?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += 8 * t.data.len() as u64;
    }
    for t in &params.tensors {
        let mut buf = Vec::with_capacity(8 * t.data.len());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
}

/// Parse a checkpoint; returns the parameters and the `extra` metadata.
pub fn read<R: Read>(mut r: R) -> Result<(ModelParams, serde_json::Value)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta: Meta =
        serde_json::from_slice(c.take(meta_len)?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let mut params = ModelParams::zeros(&meta.config)?;
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = c.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("tensor `{name}`: unsupported dtype {dtype}")));
        }
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = c.u64()? as usize;
        entries.push((name, shape, offset));
    }
    let data = &buf[c.pos..];
    if entries.len() != params.tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {}",
            params.tensors.len(),
            entries.len()
        )));
    }
    for (name, shape, offset) in entries {
        let id = params
            .find(&name)
            .ok_or_else(|| Error::Format(format!("unexpected tensor `{name}`")))?;
        let t = &mut params.tensors[id.0];
        if t.shape != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {shape:?}, config implies {:?}",
                t.shape
            )));
        }
        let bytes = data
            .get(offset..offset + 8 * t.data.len())
            .ok_or_else(|| Error::Format(format!("tensor `{name}` data out of bounds")))?;
        for (v, b) in t.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    params.check_finite()?;
    Ok((params, meta.extra))
}

pub fn save(params: &ModelParams, extra: serde_json::Value, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write(params, extra, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    Ok(read(fs::File::open(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParams::init(&ModelConfig::micro(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        write(&p, serde_json::json!({"step": 7}), &mut buf).unwrap();
        let (q, extra) = read(&buf[..]).unwrap();
        assert_eq!(p.tensors, q.tensors);
        assert_eq!(q.config, p.config);
        assert_eq!(extra["step"], 7);
    }

    #[test]
    fn rejects_corruption() {
        let p = ModelParams::init(&ModelConfig::micro(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        write(&p, serde_json::Value::Null, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read(&buf[..buf.len() - 3]), Err(Error::Format(_))));
    }
}
