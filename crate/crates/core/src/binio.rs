//! Little-endian primitives with byte-offset tracking for error reporting.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct OffsetReader<R> {
    inner: R,
    offset: u64,
    doc: Option<u64>,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            offset: 0,
            doc: None,
        }
    }

    pub fn set_doc(&mut self, doc: Option<u64>) {
        self.doc = doc;
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset,
            doc: self.doc,
            message: message.into(),
        }
    }

    pub fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(self.error(format!("truncated input while reading {what}")))
            }
            Err(e) => Err(self.error(format!("read failed ({what}): {e}"))),
        }
    }

    /// Returns `None` on a clean EOF before the first byte.
    pub fn try_fill(&mut self, buf: &mut [u8]) -> Result<usize> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(self.error(format!("read failed: {e}"))),
            }
        }
        self.offset += filled as u64;
        Ok(filled)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
}

pub(crate) fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}
