//! Binary checkpoint container.
//!
//! ```text
//! "MTRL1"                     5 bytes
//! version                     u16   (1)
//! crc32                       u32   over every byte that follows
//! config length, config JSON  u32, UTF-8
//! tensor count                u32
//! per tensor: name length u32, name, dtype u8 (0 = f32), rank u8,
//!             dims u32 × rank, payload f32 × prod(dims)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Dims, ParamStore, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 5] = b"MTRL1";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 5 + 2 + 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs completed when the checkpoint was written.
    #[serde(default)]
    pub epoch: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes(store: &ParamStore, cfg: &CheckpointConfig) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let json = serde_json::to_vec(cfg).map_err(|e| corrupt(format!("config encoding: {e}")))?;
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    body.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(DTYPE_F32);
        body.push(4);
        for d in p.value.dims() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(corrupt(format!("truncated {what}: expected {n} bytes, found {left}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, CheckpointConfig)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!(
            "truncated header: expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[5], bytes[6]]);
    if version != VERSION {
        return Err(corrupt(format!("unknown version {version}")));
    }
    let stored = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }

    let mut c = Cursor { buf: body, pos: 0 };
    let len = c.u32("config length")? as usize;
    let cfg: CheckpointConfig = serde_json::from_slice(c.take(len, "config")?).map_err(|e| corrupt(format!("config: {e}")))?;
    let count = c.u32("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "tensor name")?)
            .map_err(|_| corrupt(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(corrupt(format!("`{name}`: unsupported dtype code {dtype}")));
        }
        let rank = c.u8("rank")? as usize;
        if rank != 4 {
            return Err(corrupt(format!("`{name}`: rank {rank}, expected 4")));
        }
        let mut dims: Dims = [0; 4];
        for d in &mut dims {
            *d = c.u32("dims")? as usize;
        }
        let n: usize = dims.iter().product();
        let payload = c.take(n * 4, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if store.contains(&name) {
            return Err(corrupt(format!("duplicate tensor `{name}`")));
        }
        store.insert(name, Tensor::new(dims, data)?);
    }
    if c.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - c.pos)));
    }
    Ok((store, cfg))
}

pub fn save_checkpoint(store: &ParamStore, cfg: &CheckpointConfig, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(store, cfg)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn sample() -> (ParamStore, CheckpointConfig) {
        let cfg = CheckpointConfig {
            epoch: 3,
            ..Default::default()
        };
        let model = Model::new(cfg.model.clone()).unwrap();
        (model.init_params(), cfg)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (store, cfg) = sample();
        let bytes = to_bytes(&store, &cfg).unwrap();
        let (s2, c2) = from_bytes(&bytes).unwrap();
        assert_eq!((&s2, &c2), (&store, &cfg));
        assert_eq!(to_bytes(&s2, &c2).unwrap(), bytes);
    }

    #[test]
    fn empty_store() {
        let cfg = CheckpointConfig::default();
        let bytes = to_bytes(&ParamStore::new(), &cfg).unwrap();
        let (s, c) = from_bytes(&bytes).unwrap();
        assert!(s.is_empty());
        assert_eq!(c, cfg);
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new([1, 1, 1, 2], vec![1.0, -2.0]).unwrap());
        let bytes = to_bytes(&store, &CheckpointConfig::default()).unwrap();
        assert_eq!(&bytes[..5], b"MTRL1");
        assert_eq!(&bytes[5..7], &[1, 0]);
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(tail, [1.0f32.to_le_bytes(), (-2.0f32).to_le_bytes()].concat());
    }

    #[test]
    fn error_messages() {
        let (store, cfg) = sample();
        let bytes = to_bytes(&store, &cfg).unwrap();
        let msg = |b: &[u8]| from_bytes(b).unwrap_err().to_string();
        assert!(msg(b"PNG....").contains("not a checkpoint"));
        let mut v = bytes.clone();
        v[5] = 9;
        assert!(msg(&v).contains("unknown version 9"));
        let mut v = bytes.clone();
        let last = v.len() - 1;
        v[last] ^= 1;
        assert!(msg(&v).contains("checksum"));

        // truncation with a recomputed checksum reaches the structural check
        let mut v = bytes[..bytes.len() - 6].to_vec();
        let crc = crc32fast::hash(&v[HEADER_LEN..]);
        v[7..11].copy_from_slice(&crc.to_le_bytes());
        let m = msg(&v);
        assert!(m.contains("expected") && m.contains("found"), "{m}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let (store, cfg) = sample();
        save_checkpoint(&store, &cfg, &p).unwrap();
        let (s2, c2) = load_checkpoint(&p).unwrap();
        assert_eq!((s2, c2), (store, cfg));
    }
}
