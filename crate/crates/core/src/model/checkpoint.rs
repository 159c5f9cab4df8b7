//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "DRFN" | version u32 | scale u32 | channels u32 | cycles u32 | blocks u32 | levels u32
//! | tensor count u32
//! | per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 × rank | f32 values
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DrfnModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRFN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset(),
            message: message.into(),
        })
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format {
                offset: self.offset(),
                message: format!("{what}: element count overflows"),
            })?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            self.pos = start;
            return self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            ));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

pub fn encode_checkpoint(model: &DrfnModel) -> Vec<u8> {
    let cfg = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        cfg.scale,
        cfg.channels as u32,
        cfg.cycles as u32,
        cfg.blocks as u32,
        cfg.levels as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let registry = model.registry();
    buf.extend_from_slice(&(registry.len() as u32).to_le_bytes());
    for entry in registry {
        buf.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.name.as_bytes());
        buf.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in entry.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DrfnModel> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let config_at = r.offset();
    let config = ModelConfig {
        scale: r.u32("scale")?,
        channels: r.u32("channels")? as usize,
        cycles: r.u32("cycles")? as usize,
        blocks: r.u32("blocks")? as usize,
        levels: r.u32("levels")? as usize,
    };
    let mut model = DrfnModel::zeros(config).map_err(|e| Error::Format {
        offset: config_at,
        message: e.to_string(),
    })?;
    let count = r.u32("tensor count")? as usize;
    let expected = model.registry().len();
    if count != expected {
        return r.fail(format!("checkpoint holds {count} tensors, architecture needs {expected}"));
    }

    let mut seen = HashSet::new();
    let mut entries = model.registry_mut();
    for _ in 0..count {
        let name_at = r.offset();
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format {
                offset: name_at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let Some(entry) = entries.iter_mut().find(|e| e.name == name) else {
            return Err(Error::Format {
                offset: name_at,
                message: format!("unknown tensor `{name}`"),
            });
        };
        if !seen.insert(name.clone()) {
            return Err(Error::Format {
                offset: name_at,
                message: format!("duplicate tensor `{name}`"),
            });
        }
        let rank = r.u32("rank")? as usize;
        let dims_at = r.offset();
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        if dims != entry.shape {
            return Err(Error::Format {
                offset: dims_at,
                message: format!("tensor `{name}` has dims {dims:?}, expected {:?}", entry.shape),
            });
        }
        let values = r.f32s(entry.values.len(), &format!("values of `{name}`"))?;
        entry.values.copy_from_slice(&values);
    }
    r.finish()?;
    drop(entries);
    Ok(model)
}

pub fn save_checkpoint(model: &DrfnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DrfnModel> {
    decode_checkpoint(&fs::read(path)?)
}
