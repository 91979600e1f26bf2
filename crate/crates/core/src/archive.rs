//! Named-tensor archive used for network weights and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "RSPLATAR"
//! version   u32      1
//! count     u64      number of entries
//! entries, each:
//!   name_len u32, name (UTF-8)
//!   kind     u8       0 = f64 tensor, 1 = u64 vector
//!   rank     u32, dims u64 * rank
//!   data     8 bytes * product(dims), row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"RSPLATAR";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Tensor(Tensor),
    Words(Vec<u64>),
}

/// Ordered collection of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Entry)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), Entry::Tensor(tensor)));
    }

    /// Stores `values` as a rank-1 tensor.
    pub fn push_values(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let n = values.len();
        self.push_tensor(name, Tensor::new([n], values).expect("rank-1 shape"));
    }

    pub fn push_words(&mut self, name: impl Into<String>, words: Vec<u64>) {
        self.entries.push((name.into(), Entry::Words(words)));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn index(&self) -> BTreeMap<&str, &Entry> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e)).collect()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.index().get(name) {
            Some(Entry::Tensor(t)) => Ok(t),
            Some(Entry::Words(_)) => Err(Error::Validation(format!("archive entry {name} is not a tensor"))),
            None => Err(Error::Validation(format!("archive entry {name} is missing"))),
        }
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        Ok(self.tensor(name)?.data())
    }

    pub fn words(&self, name: &str) -> Result<&[u64]> {
        match self.index().get(name) {
            Some(Entry::Words(w)) => Ok(w),
            Some(Entry::Tensor(_)) => Err(Error::Validation(format!("archive entry {name} is not a word vector"))),
            None => Err(Error::Validation(format!("archive entry {name} is missing"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Tensor(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for d in t.shape() {
                        out.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Words(w) => {
                    out.push(1);
                    out.extend_from_slice(&1u32.to_le_bytes());
                    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
                    for v in w {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(Error::format(0, "bad archive magic"));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::format(8, format!("unsupported archive version {version}")));
        }
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(at as u64, "entry name is not UTF-8"))?;
            let kind_at = r.pos;
            let kind = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            let mut total: u64 = 1;
            for _ in 0..rank {
                let d = r.u64()?;
                total = total
                    .checked_mul(d)
                    .filter(|t| t.checked_mul(8).is_some_and(|b| b <= (r.bytes.len() - r.pos) as u64))
                    .ok_or_else(|| Error::format(r.pos as u64, format!("entry {name} is larger than the file")))?;
                shape.push(d as usize);
            }
            let entry = match kind {
                0 => {
                    let data = (0..total).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
                    Entry::Tensor(Tensor::new(shape, data)?)
                }
                1 if rank == 1 => Entry::Words((0..total).map(|_| r.u64()).collect::<Result<Vec<_>>>()?),
                _ => return Err(Error::format(kind_at as u64, format!("bad entry kind {kind} rank {rank}"))),
            };
            entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated archive: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
