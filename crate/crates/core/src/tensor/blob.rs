//! Named-tensor blob: `CLT1` magic, then repeated entries of
//! `u16 name_len | name (UTF-8) | u8 rank | u32 extents… | f64 payload…`,
//! all little-endian, until end of input.

use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLT1";

pub type NamedTensors = Vec<(String, Tensor)>;

pub fn write_named<W: Write>(out: &mut W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor name too long")
        })?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[t.rank() as u8])?;
        for &ext in t.shape() {
            out.write_all(&(ext as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                expected: n,
                actual: remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_named(bytes: &[u8]) -> Result<NamedTensors> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected CLT1".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(n * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_named_file(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    write_named(&mut buf, tensors).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_named_file(path: &Path) -> Result<NamedTensors> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_named(&bytes)
}
