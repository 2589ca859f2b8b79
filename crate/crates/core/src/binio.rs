//! Little-endian primitives for the binary cache files.
//!
//! Every cache starts with a 4-byte magic tag and a `u32` format version,
//! followed by a file-specific header and payload (documented on each type
//! that implements a cache).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BinReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    /// Checks the magic tag and returns the reader with the format version.
    pub fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<(Self, u32), BinError> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(BinError::Magic { expected: *magic });
        }
        let mut r = Self { buf, pos: 4 };
        let v = r.u32()?;
        Ok((r, v))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        if self.pos + n > self.buf.len() {
            return Err(BinError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, BinError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, BinError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, BinError> {
        usize::try_from(self.u64()?).map_err(|_| BinError::Corrupt("length overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64, BinError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], BinError> {
        let n = self.usize()?;
        self.take(n)
    }

    pub fn finish(self) -> Result<(), BinError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(BinError::Corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

/// Envelope (`LMAR`, version 1) around a cache payload: `bytes(provenance
/// JSON), bytes(payload)`.
pub fn wrap_artifact(provenance: &str, payload: &[u8]) -> Vec<u8> {
    let mut w = BinWriter::new(b"LMAR", 1);
    w.bytes(provenance.as_bytes());
    w.bytes(payload);
    w.finish()
}

/// Splits an envelope into its provenance JSON and payload.
pub fn unwrap_artifact(buf: &[u8]) -> Result<(&str, &[u8]), BinError> {
    let (mut r, version) = BinReader::open(buf, b"LMAR")?;
    if version != 1 {
        return Err(BinError::Version(version));
    }
    let prov = std::str::from_utf8(r.bytes()?).map_err(|e| BinError::Corrupt(e.to_string()))?;
    let payload = r.bytes()?;
    r.finish()?;
    Ok((prov, payload))
}
