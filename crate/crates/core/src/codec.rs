//! Canonical length-prefixed binary encoding.
//!
//! Every field is written as a 4-byte big-endian length followed by the
//! field bytes. Integers are fields holding their big-endian bytes, lists
//! are a count field followed by one field per element, and nested
//! structures are a field holding their own canonical encoding.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input at byte {0}")]
    Truncated(usize),
    #[error("field at byte {offset} has length {actual}, expected {expected}")]
    BadLength {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{0} trailing bytes after canonical value")]
    Trailing(usize),
    #[error("invalid field value: {0}")]
    Invalid(String),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.field(&[v])
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    /// Writes a count followed by one nested field per item.
    pub fn list<T>(&mut self, items: &[T], mut each: impl FnMut(&T, &mut Encoder)) -> &mut Self {
        self.u32(u32::try_from(items.len()).expect("list too long"));
        for item in items {
            let mut inner = Encoder::new();
            each(item, &mut inner);
            self.field(&inner.buf);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    pub fn field(&mut self) -> Result<&'a [u8], DecodeError> {
        let start = self.pos;
        let header = self
            .input
            .get(start..start + 4)
            .ok_or(DecodeError::Truncated(start))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        let body_start = start + 4;
        let body = body_start
            .checked_add(len)
            .and_then(|end| self.input.get(body_start..end))
            .ok_or(DecodeError::Truncated(body_start))?;
        self.pos = body_start + len;
        Ok(body)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let offset = self.pos;
        let bytes = self.field()?;
        bytes.try_into().map_err(|_| DecodeError::BadLength {
            offset,
            expected: N,
            actual: bytes.len(),
        })
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.fixed::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.fixed()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.fixed()?))
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let bytes = self.field()?;
        String::from_utf8(bytes.to_vec()).map_err(|e| DecodeError::Invalid(e.to_string()))
    }

    /// Reads a list written by [`Encoder::list`], decoding each element
    /// from its own nested decoder.
    pub fn list<T>(
        &mut self,
        mut each: impl FnMut(&mut Decoder<'a>) -> Result<T, DecodeError>,
    ) -> Result<Vec<T>, DecodeError> {
        let count = self.u32()? as usize;
        // every element costs at least its 4-byte length header
        if count > self.remaining() / 4 {
            return Err(DecodeError::Truncated(self.pos));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut inner = Decoder::new(self.field()?);
            out.push(each(&mut inner)?);
            inner.finish()?;
        }
        Ok(out)
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
