//! Versioned binary checkpoint made of named `f64` blocks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"PMCKPT"   version u32
//! meta   count u32, then (key, value) string pairs
//! blocks count u32, then per block:
//!        name string, ndim u32, dims u64 × ndim, values f64 × Π dims
//! string = len u32 + UTF-8 bytes
//! ```
//!
//! Blocks and metadata are written in lexicographic key order so equal
//! checkpoints serialize to identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Module, Parameter, Tensor2};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"PMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub blocks: BTreeMap<String, Tensor2>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Invalid(format!("checkpoint has no metadata `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Invalid(format!("checkpoint metadata `{key}` = `{raw}` is malformed")))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.blocks.insert(name.into(), value);
    }

    pub fn block(&self, name: &str) -> Result<&Tensor2> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("checkpoint has no block `{name}`")))
    }

    /// Stores every parameter of `module` under `prefix.<param name>`.
    pub fn insert_module(&mut self, prefix: &str, module: &dyn Module) {
        module.visit_params(&mut |p: &Parameter| {
            self.insert(format!("{prefix}.{}", p.name), p.value.clone());
        });
    }

    /// Loads values for every parameter of `module` from `prefix.<param name>`.
    pub fn load_module(&self, prefix: &str, module: &mut dyn Module) -> Result<()> {
        let mut res = Ok(());
        module.visit_params_mut(&mut |p: &mut Parameter| {
            if res.is_err() {
                return;
            }
            let name = format!("{prefix}.{}", p.name);
            res = self.block(&name).and_then(|t| {
                if t.shape() != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "block `{name}` is {:?}, parameter expects {:?}",
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = t.clone();
                Ok(())
            });
        });
        res
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, t) in &self.blocks {
            write_str(w, name)?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, origin: &Path) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            ck.meta.insert(k, v);
        }
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            if !(1..=2).contains(&ndim) {
                return Err(fmt(format!("block `{name}` has unsupported rank {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u64(r)? as usize);
            }
            let (rows, cols) = if ndim == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
            let n = rows
                .checked_mul(cols)
                .filter(|n| *n < (1 << 32))
                .ok_or_else(|| fmt(format!("block `{name}` is implausibly large")))?;
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            ck.blocks.insert(name, Tensor2::from_vec(rows, cols, data)?);
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice(), path)
    }
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Invalid(format!("string length {n} is implausible")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Invalid(format!("invalid UTF-8 string: {e}")))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..5,
            cols in 1usize..6,
            seed in any::<u64>(),
            label in "[a-z.]{1,12}",
        ) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1).rotate_left(17) & 0x7fef_ffff_ffff_ffff))
                .collect();
            let mut ck = Checkpoint::new();
            ck.set_meta("label", &label);
            ck.insert(label.clone(), Tensor2::from_vec(rows, cols, data).unwrap());
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(&mut bytes.as_slice(), Path::new("mem")).unwrap();
            let a: Vec<u64> = ck.blocks[&label].data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.blocks[&label].data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.meta, ck.meta);
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let err = Checkpoint::read_from(&mut &b"NOTACKPT0000"[..], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&9u32.to_le_bytes());
        let err = Checkpoint::read_from(&mut bytes.as_slice(), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }
}
