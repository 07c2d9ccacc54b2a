//! Binary container for named tensors.
//!
//! Layout: the 8-byte magic `SPOTCKPT`, a version byte, then one record per
//! tensor until end of input. Each record is a `u32` name length, the UTF-8
//! name, a `u32` rank, `rank` dimensions as `u64`, and the data as `f64`, all
//! little-endian.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPOTCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

pub fn write_tensors(mut out: impl Write, tensors: &[(String, Tensor)]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[CHECKPOINT_VERSION])?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensors(mut input: impl Read) -> Result<NamedTensors> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(MAGIC.len(), "checkpoint magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = cur.take(1, "checkpoint version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let mut tensors = Vec::new();
    while !cur.at_end() {
        let name_len = cur.u32("tensor name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = cur.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor '{name}' has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| cur.u64("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' is too large")))?;
        let raw = cur.take(
            count.checked_mul(8).ok_or(Error::Truncated("tensor data"))?,
            "tensor data",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(tensors)
}

pub fn find<'a>(tensors: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
