//! Binary weight files.
//!
//! Layout, all integers little-endian: magic `PTCK`, `u32` version, 32-byte
//! SHA-256 of the module's architecture string, `u32` layer count, then per
//! layer a `u16`-prefixed name, `u8` kind code, `u32` rank with `u64` dims,
//! `u32` array count and each array as `u64` length plus `f64` values
//! (parameters first, then buffers).

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::layers::LayerKind;
use super::sequential::Module;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PTCK";
pub const VERSION: u32 = 1;

pub fn network_hash(module: &dyn Module) -> [u8; 32] {
    Sha256::digest(module.architecture().as_bytes()).into()
}

pub fn to_bytes(module: &dyn Module) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&network_hash(module));
    let layers = module.named_layers();
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for (name, layer) in layers {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let spec = layer.spec();
        out.push(spec.kind.code());
        out.extend_from_slice(&(spec.dims.len() as u32).to_le_bytes());
        for d in &spec.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        let arrays: Vec<&[f64]> = layer.params().into_iter().chain(layer.buffers()).collect();
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for a in arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint("unexpected end of file".into())),
        }
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

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Loads weights into a module of identical architecture.
pub fn from_bytes(module: &mut dyn Module, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("not a plugtrack checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    if r.take(32)? != network_hash(module) {
        return Err(bad(
            "checkpoint was written by a different network architecture",
        ));
    }
    let count = r.u32()? as usize;
    let mut layers = module.named_layers_mut();
    if count != layers.len() {
        return Err(bad(format!(
            "expected {} layers, found {count}",
            layers.len()
        )));
    }
    for (name, layer) in layers.iter_mut() {
        let len = r.u16()? as usize;
        let stored =
            std::str::from_utf8(r.take(len)?).map_err(|_| bad("layer name is not utf-8"))?;
        if stored != name {
            return Err(bad(format!("expected layer {name}, found {stored}")));
        }
        let spec = layer.spec();
        if LayerKind::from_code(r.u8()?) != Some(spec.kind) {
            return Err(bad(format!("layer {name} has the wrong kind")));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        if dims != spec.dims {
            return Err(bad(format!(
                "layer {name} has dims {dims:?}, expected {:?}",
                spec.dims
            )));
        }
        let n_arrays = r.u32()? as usize;
        let lens: Vec<usize> = layer
            .params()
            .iter()
            .chain(layer.buffers().iter())
            .map(|a| a.len())
            .collect();
        if n_arrays != lens.len() {
            return Err(bad(format!(
                "layer {name} stores {n_arrays} arrays, expected {}",
                lens.len()
            )));
        }
        let mut values = Vec::with_capacity(lens.len());
        for &want in &lens {
            let n = r.u64()? as usize;
            if n != want {
                return Err(bad(format!(
                    "layer {name} array of length {n}, expected {want}"
                )));
            }
            let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("array too large"))?)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("layer {name} holds non-finite weights")));
            }
            values.push(vals);
        }
        let mut values = values.into_iter();
        for dst in layer.params_mut() {
            dst.copy_from_slice(&values.next().unwrap());
        }
        for dst in layer.buffers_mut() {
            dst.copy_from_slice(&values.next().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after the last layer"));
    }
    Ok(())
}

pub fn save(module: &dyn Module, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(module))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(module: &mut dyn Module, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(module, &bytes)
}
