//! Little-endian binary container shared by every on-disk artifact.
//!
//! Each container opens with a 9-byte preamble: a 4-byte magic, a format
//! version byte (currently 1), a dtype byte (0 = 32-bit real payload,
//! 1 = 64-bit integer payload) and three reserved zero bytes. The body layout
//! after the preamble is owned by the type that writes it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U64: u8 = 1;
pub const PREAMBLE_LEN: usize = 9;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_preamble(magic: &[u8; 4], dtype: u8) -> Self {
        let mut w = Self::new();
        w.preamble(magic, dtype);
        w
    }

    pub fn preamble(&mut self, magic: &[u8; 4], dtype: u8) {
        self.buf.extend_from_slice(magic);
        self.buf.push(VERSION);
        self.buf.push(dtype);
        self.buf.extend_from_slice(&[0u8; 3]);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::param(format!("{v} exceeds u32 range")))?;
        self.u32(v);
        Ok(())
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.f32(*v);
        }
    }

    pub fn u64s(&mut self, vs: &[u64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.u64(*v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// Length-prefixed (u32) byte array.
    pub fn blob(&mut self, b: &[u8]) -> Result<()> {
        self.len_u32(b.len())?;
        self.bytes(b);
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a byte slice that reports the offset of every failure.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.offset(), msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} available",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn peek(&self, n: usize) -> Option<&'a [u8]> {
        self.buf.get(self.pos..self.pos + n)
    }

    /// Checks magic, version and dtype; returns the dtype byte.
    pub fn preamble(&mut self, magic: &[u8; 4]) -> Result<u8> {
        let start = self.offset();
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(
                start,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::format(
                start + 4,
                format!("unsupported version {version}"),
            ));
        }
        let dtype = self.u8()?;
        self.take(3)?;
        Ok(dtype)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads `n` reals, rejecting non-finite values.
    pub fn finite_f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.err("element count overflow"))?;
        let start = self.pos;
        let raw = self.take(len)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    (start + 4 * i) as u64,
                    format!("non-finite value {v}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.err("element count overflow"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.err("element count overflow"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("{} trailing bytes", self.remaining())))
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}
