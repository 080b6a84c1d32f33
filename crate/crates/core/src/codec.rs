//! Framing shared by the binary containers.
//!
//! ```text
//! magic[4] | version u32 | payload_len u64 | payload | crc32(payload) u32
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("wrong container: expected {expected:?}, found {found:?}")]
    WrongContainer { expected: String, found: String },
    #[error("unsupported container version {found} (expected {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated container at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const HEADER: usize = 16;

pub(crate) fn frame(magic: &[u8; 4], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + HEADER + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Validates the frame and returns the payload.
pub(crate) fn unframe<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<&'a [u8], ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: 4 - bytes.len(),
        });
    }
    if &bytes[..4] != magic {
        return Err(ContainerError::WrongContainer {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    if bytes.len() < HEADER {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: HEADER - bytes.len(),
        });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if found != version {
        return Err(ContainerError::UnsupportedVersion {
            found,
            supported: version,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = HEADER
        .checked_add(len)
        .and_then(|e| e.checked_add(4))
        .ok_or_else(|| ContainerError::Malformed("payload length overflows".into()))?;
    if bytes.len() < end {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            needed: end - bytes.len(),
        });
    }
    let payload = &bytes[HEADER..HEADER + len];
    let stored = u32::from_le_bytes(bytes[HEADER + len..end].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ContainerError::Checksum { stored, computed });
    }
    Ok(payload)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, ContainerError> {
    Ok(std::fs::read(path)?)
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
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

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the file, for error reporting.
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Truncated {
                offset: self.base + self.buf.len(),
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, elem: usize) -> Result<usize, ContainerError> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(ContainerError::Malformed(format!(
                "declared length {n} exceeds remaining payload at byte {}",
                self.base + self.pos
            )));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, ContainerError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], ContainerError> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, ContainerError> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| ContainerError::Malformed("invalid utf-8 string".into()))
    }

    pub fn finish(self) -> Result<(), ContainerError> {
        if self.pos != self.buf.len() {
            return Err(ContainerError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
