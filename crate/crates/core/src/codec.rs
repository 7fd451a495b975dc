//! Little-endian binary helpers shared by the checkpoint and dataset files.

use crate::error::{Error, Result};
use crate::kv::KvBlock;
use crate::tensor::Tensor;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    /// `u32` byte length followed by the UTF-8 `key=value` lines.
    pub fn kv(&mut self, kv: &KvBlock) -> Result<()> {
        let text = kv.to_string();
        self.u32(len_u32(text.len(), "key=value block")?);
        self.bytes(text.as_bytes());
        Ok(())
    }

    /// Name (u16 length + bytes), rank (u8), extents (u32 each), f64 data.
    pub fn tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name `{name}` too long")))?;
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::Format(format!("tensor `{name}` rank too large")))?;
        self.u16(name_len);
        self.bytes(name.as_bytes());
        self.u8(ndim);
        for &e in t.shape() {
            self.u32(len_u32(e, "tensor extent")?);
        }
        self.buf.reserve(8 * t.numel());
        for &v in t.data() {
            self.f64(v);
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} length {n} exceeds u32")))
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated file: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Checks a magic string and version byte.
    pub fn header(&mut self, magic: &[u8], version: u8) -> Result<()> {
        let got = self.take(magic.len())?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u8()?;
        if v != version {
            return Err(Error::Format(format!(
                "unsupported version {v}, expected {version}"
            )));
        }
        Ok(())
    }

    pub fn kv(&mut self) -> Result<KvBlock> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::Format(format!("key=value block is not UTF-8: {e}")))?;
        text.parse()
    }

    pub fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let ndim = self.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Format(format!("tensor `{name}` too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}
