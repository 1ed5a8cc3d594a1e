//! Minimal NPY v1.0 codec: little-endian `<f4`, `<f8`, `<i8`, C order,
//! rank 1 or 2. `<f4` data widens to `f64` on load.

use crate::error::FormatError;

use super::{ArrayData, NdArray};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    I8,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self, FormatError> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<i8" => Ok(Dtype::I8),
            other => Err(FormatError::UnsupportedDtype(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

#[derive(Debug, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parser for the python-literal header dictionary, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }`.
struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn err(&self, what: &str) -> FormatError {
        FormatError::MalformedHeader(format!("{what} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), FormatError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn number(&mut self) -> Result<usize, FormatError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        // numpy may write `3L` on very old versions
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        if self.src.get(self.pos) == Some(&b'L') {
            self.pos += 1;
        }
        digits.parse().map_err(|_| self.err("expected integer"))
    }

    fn value(&mut self) -> Result<Value, FormatError> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => {
                            dims.push(self.number()?);
                            match self.peek() {
                                Some(b',') => self.pos += 1,
                                Some(b')') => {}
                                _ => return Err(self.err("expected ',' or ')'")),
                            }
                        }
                        None => return Err(self.err("unterminated tuple")),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => {
                let rest = &self.src[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(self.err("unexpected value"))
                }
            }
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value)>, FormatError> {
        self.expect(b'{')?;
        let mut entries = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        Ok(entries)
    }
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn parse_header(text: &[u8]) -> Result<Header, FormatError> {
    let entries = HeaderParser { src: text, pos: 0 }.dict()?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in entries {
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => {
                return Err(FormatError::MalformedHeader(format!(
                    "unexpected entry {k:?}: {v:?}"
                )))
            }
        }
    }
    let descr = descr.ok_or_else(|| FormatError::MalformedHeader("missing 'descr'".into()))?;
    let fortran =
        fortran.ok_or_else(|| FormatError::MalformedHeader("missing 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| FormatError::MalformedHeader("missing 'shape'".into()))?;
    if fortran {
        return Err(FormatError::FortranOrder);
    }
    let dtype = Dtype::parse(&descr)?;
    if !(1..=2).contains(&shape.len()) {
        return Err(FormatError::UnsupportedRank(shape.len()));
    }
    Ok(Header { dtype, shape })
}

pub(crate) fn decode(bytes: &[u8]) -> Result<NdArray, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(FormatError::MalformedHeader("file ends inside preamble".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(FormatError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(FormatError::MalformedHeader("file ends inside header".into()));
    }
    let header = parse_header(&bytes[PREAMBLE_LEN..data_start])?;

    let count: usize = header.shape.iter().product();
    let payload = &bytes[data_start..];
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }

    let data = match header.dtype {
        Dtype::F8 => ArrayData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
        Dtype::F4 => ArrayData::F64(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
        ),
        Dtype::I8 => ArrayData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
    };
    if let ArrayData::F64(values) = &data {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
    }
    Ok(NdArray {
        shape: header.shape,
        data,
    })
}

pub(crate) fn encode(array: &NdArray) -> Vec<u8> {
    let descr = match array.data {
        ArrayData::F64(_) => "<f8",
        ArrayData::I64(_) => "<i8",
    };
    let shape = match array.shape.as_slice() {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // pad so that the payload starts on a 64-byte boundary; header ends in '\n'
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat(' ').take(padding));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + array.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}
