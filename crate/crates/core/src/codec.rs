//! Little-endian readers and writers for the `DYNC` container family.

use crate::error::FormatError;

pub(crate) const MAGIC: [u8; 4] = *b"DYNC";
pub(crate) const VERSION: u16 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn tag(&mut self, what: &'static str) -> Result<[u8; 4], FormatError> {
        Ok(self.bytes(4, what)?.try_into().unwrap())
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.bytes(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.bytes(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let raw = self.bytes(n.checked_mul(4).ok_or(FormatError::Truncated(what))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    /// Checks magic and version.
    pub fn header(&mut self) -> Result<(), FormatError> {
        let magic = self.tag("magic")?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = self.u16("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn header() -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(&MAGIC);
        w.u16(VERSION);
        w
    }

    pub fn tag(&mut self, t: &[u8; 4]) {
        self.buf.extend_from_slice(t);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vals: impl IntoIterator<Item = f32>) {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}
