//! Checkpoint files: a config blob plus every parameter tensor.
//!
//! Layout, all little-endian: the magic `HSSCCKPT`, a u16 format version,
//! the length-prefixed canonical config blob, the parameter tensor count,
//! then each tensor as a length-prefixed id, a rank byte, u32 extents and
//! f32 values in registry order. An optional opaque appendix carries
//! training state so a run can resume; readers that only want the model
//! ignore it.
//!
//! Values are stored as f32. Loading therefore rounds, but every consumer
//! of a checkpoint sees the same rounding, which is what the codec needs:
//! encoder and decoder processes that load the same file build identical
//! entropy tables.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{ModelBundle, ModelConfig};
use crate::tensor::Parameters;

const MAGIC: &[u8; 8] = b"HSSCCKPT";
const VERSION: u16 = 1;

/// Serializes a bundle (and optional training-state appendix) to bytes.
pub fn write_checkpoint(bundle: &ModelBundle, appendix: Option<&[u8]>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let blob = bundle.config.to_blob();
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);

    let mut count: u32 = 0;
    bundle.visit(&mut |_| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    bundle.visit(&mut |p| {
        let id = p.id.as_bytes();
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });

    match appendix {
        Some(bytes) => {
            out.push(1);
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        None => out.push(0),
    }
    out
}

/// Parses checkpoint bytes: rebuilds the model from its config, fills the
/// parameters, and returns the appendix verbatim if one is present.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelBundle, Option<Vec<u8>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("not a checkpoint: bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let blob_len = r.u32()? as usize;
    let config = ModelConfig::from_blob(r.take(blob_len)?)?;
    let mut bundle = ModelBundle::build(&config)?;

    let count = r.u32()? as usize;
    let mut expected: u32 = 0;
    bundle.visit(&mut |_| expected += 1);
    if count != expected as usize {
        return Err(Error::format(format!(
            "checkpoint holds {count} tensors, model has {expected}"
        )));
    }

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::format("parameter id is not utf-8"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk size is 4")) as f64)
            .collect();
        records.push((id, shape, values));
    }
    fill_in_order(&mut bundle, records)?;

    let appendix = match r.u8()? {
        0 => None,
        1 => {
            let len = r.u64()? as usize;
            Some(r.take(len)?.to_vec())
        }
        other => {
            return Err(Error::format(format!("bad appendix flag {other}")));
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok((bundle, appendix))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    bundle: &ModelBundle,
    appendix: Option<&[u8]>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(bundle, appendix))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelBundle, Option<Vec<u8>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_checkpoint(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Stored tensors must appear in registry order with matching ids and
/// shapes; anything else means the file and the model disagree.
fn fill_in_order(
    bundle: &mut ModelBundle,
    records: Vec<(String, Vec<usize>, Vec<f64>)>,
) -> Result<()> {
    let mut failure = None;
    let mut it = records.into_iter();
    bundle.visit_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        let (id, shape, values) = it.next().expect("record count was checked");
        if id != p.id {
            failure = Some(Error::format(format!(
                "checkpoint stores {id} where the model expects {}",
                p.id
            )));
            return;
        }
        if shape != p.value.shape() {
            failure = Some(Error::format(format!(
                "tensor {id} has shape {shape:?}, model expects {:?}",
                p.value.shape()
            )));
            return;
        }
        p.value.data_mut().copy_from_slice(&values);
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("len 2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }
}
