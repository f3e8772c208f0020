//! Versioned named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ICTC" | version u16 | meta_count u32 | (key, value)* | tensor_count u32 | tensor*
//! string = len u32, UTF-8 bytes
//! tensor = name string | rank u32 | extents u32×rank | f32×∏extents
//! ```
//!
//! Values are narrowed to `f32` on save; anything after the last declared
//! tensor is rejected.

use std::fs;
use std::path::Path;

use ict_ndgrad::{Array, ParamStore};
use indexmap::IndexMap;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ICTC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: IndexMap<String, String>,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn require_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("malformed metadata `{key}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.metadata.len())?;
        for (k, v) in &self.metadata {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        put_u32(&mut out, self.tensors.len())?;
        for (name, a) in self.tensors.iter() {
            put_str(&mut out, name)?;
            put_u32(&mut out, a.rank())?;
            for &e in a.shape() {
                put_u32(&mut out, e)?;
            }
            for &v in a.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut metadata = IndexMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = r.u32()?;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` extents exceed the file")))?;
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let a = Array::new(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if tensors.insert(name.clone(), a).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!(
                "{} bytes after the {count} declared tensors",
                r.remaining()
            )));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Insert every tensor of `params` under `prefix.`.
    pub fn insert_group(&mut self, prefix: &str, params: &ParamStore) {
        for (name, a) in params.iter() {
            self.tensors.insert(format!("{prefix}.{name}"), a.clone());
        }
    }

    /// Tensors stored under `prefix.`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> ParamStore {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(n, a)| n.strip_prefix(&p).map(|s| (s.to_string(), a.clone())))
            .collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
    }
}
