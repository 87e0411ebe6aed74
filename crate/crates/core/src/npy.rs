//! Minimal NPY reader/writer for little-endian `float32` C-order arrays.
//!
//! Reads format versions 1.0 and 2.0. Writes 1.0 (2.0 when the header
//! does not fit a 16-bit length), with the header padded so the payload
//! starts on a 64-byte boundary.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::select::attention_from_matrix;
use crate::types::{AttentionScores, FeatureTensor};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
const DTYPE_HINT: &str = "only little-endian float32 ('<f4') is supported; convert with arr.astype('<f4')";

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Int(u64),
    Tuple(Vec<Value>),
    List,
}

struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn err(&self, what: &str) -> Error {
        Error::CorruptHeader(format!("{what} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && matches!(self.src[self.pos], b' ' | b'\t' | b'\n' | b'\r') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = self.peek().ok_or_else(|| self.err("unexpected end"))?;
        if quote != b'\'' && quote != b'"' {
            return Err(self.err("expected string"));
        }
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            if self.src[self.pos] == b'\\' {
                return Err(self.err("escape sequences are not supported"));
            }
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| self.err("non-UTF-8 string"))?
            .to_owned();
        self.pos += 1;
        Ok(s)
    }

    fn value(&mut self, depth: usize) -> Result<Value> {
        if depth > 8 {
            return Err(self.err("nesting too deep"));
        }
        match self.peek().ok_or_else(|| self.err("unexpected end"))? {
            b'\'' | b'"' => self.string().map(Value::Str),
            b'(' => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    items.push(self.value(depth + 1)?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(self.err("expected `,` or `)`")),
                    }
                }
                Ok(Value::Tuple(items))
            }
            b'[' => {
                // Structured dtypes; only recorded so the caller can reject them.
                let mut level = 0usize;
                while let Some(&c) = self.src.get(self.pos) {
                    self.pos += 1;
                    match c {
                        b'[' => level += 1,
                        b']' => {
                            level -= 1;
                            if level == 0 {
                                return Ok(Value::List);
                            }
                        }
                        _ => {}
                    }
                }
                Err(self.err("unterminated list"))
            }
            c if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                // Python 2 long suffix.
                if self.src.get(self.pos) == Some(&b'L') {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.src[start..self.pos])
                    .unwrap()
                    .trim_end_matches('L');
                digits
                    .parse()
                    .map(Value::Int)
                    .map_err(|_| self.err("integer out of range"))
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
                    Err(self.err("unexpected token"))
                }
            }
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value)>> {
        self.expect(b'{')?;
        let mut entries: Vec<(String, Value)> = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value(0)?;
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(self.err(&format!("duplicate key `{key}`")));
            }
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected `,` or `}`")),
            }
        }
        if self.peek().is_some() {
            return Err(self.err("trailing characters after header dict"));
        }
        Ok(entries)
    }
}

struct Header {
    descr: Value,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_header(text: &[u8]) -> Result<Header> {
    let entries = HeaderParser { src: text, pos: 0 }.dict()?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    for (key, value) in entries {
        match key.as_str() {
            "descr" => descr = Some(value),
            "fortran_order" => match value {
                Value::Bool(b) => fortran = Some(b),
                _ => return Err(Error::CorruptHeader("fortran_order must be a bool".into())),
            },
            "shape" => match value {
                Value::Tuple(items) => {
                    let dims = items
                        .into_iter()
                        .map(|v| match v {
                            Value::Int(n) => usize::try_from(n)
                                .map_err(|_| Error::CorruptHeader("dimension too large".into())),
                            _ => Err(Error::CorruptHeader("shape entries must be integers".into())),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    shape = Some(dims);
                }
                _ => return Err(Error::CorruptHeader("shape must be a tuple".into())),
            },
            other => return Err(Error::CorruptHeader(format!("unexpected key `{other}`"))),
        }
    }
    Ok(Header {
        descr: descr.ok_or_else(|| Error::CorruptHeader("missing `descr`".into()))?,
        fortran_order: fortran.ok_or_else(|| Error::CorruptHeader("missing `fortran_order`".into()))?,
        shape: shape.ok_or_else(|| Error::CorruptHeader("missing `shape`".into()))?,
    })
}

/// Parses an in-memory NPY file.
pub fn read_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(Error::CorruptHeader("missing NPY magic".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, prefix): (usize, usize) = match (major, minor) {
        (1, 0) => {
            let raw = bytes
                .get(8..10)
                .ok_or_else(|| Error::CorruptHeader("truncated header length".into()))?;
            (usize::from(u16::from_le_bytes([raw[0], raw[1]])), 10)
        }
        (2, 0) => {
            let raw = bytes
                .get(8..12)
                .ok_or_else(|| Error::CorruptHeader("truncated header length".into()))?;
            (u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize, 12)
        }
        _ => {
            return Err(Error::CorruptHeader(format!(
                "unsupported format version {major}.{minor}"
            )))
        }
    };
    let header_end = prefix
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::CorruptHeader("header length exceeds file size".into()))?;
    let text = &bytes[prefix..header_end];
    if !text.is_ascii() {
        return Err(Error::CorruptHeader("header is not ASCII".into()));
    }
    let header = parse_header(text)?;
    match &header.descr {
        Value::Str(s) if s == "<f4" => {}
        Value::Str(s) => {
            return Err(Error::UnsupportedDtype {
                found: s.clone(),
                hint: DTYPE_HINT,
            })
        }
        _ => {
            return Err(Error::UnsupportedDtype {
                found: "structured".into(),
                hint: DTYPE_HINT,
            })
        }
    }
    if header.fortran_order {
        return Err(Error::UnsupportedShape(
            "Fortran-ordered arrays are not supported; save with np.ascontiguousarray".into(),
        ));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptHeader("shape product overflows".into()))?;
    let payload = &bytes[header_end..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::CorruptHeader("shape product overflows".into()))?;
    if payload.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn read_npy_file(path: impl AsRef<Path>) -> Result<NpyArray> {
    read_npy(&fs::read(path)?)
}

fn header_bytes(shape: &[usize]) -> Vec<u8> {
    let dims = match shape {
        [one] => format!("{one},"),
        _ => shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
    };
    let dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({dims}), }}");
    let (version, prefix) = if dict.len() + 1 + 10 <= u16::MAX as usize {
        (1u8, 10)
    } else {
        (2u8, 12)
    };
    let unpadded = prefix + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + padding + 1;
    let mut out = Vec::with_capacity(prefix + header_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[version, 0]);
    if version == 1 {
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
    } else {
        out.extend_from_slice(&(header_len as u32).to_le_bytes());
    }
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    out
}

/// Serializes a float32 array; `data.len()` must equal the shape product.
pub fn write_npy<W: Write>(mut w: W, shape: &[usize], data: &[f32]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::shape(format!("{count} values"), format!("{} values", data.len())));
    }
    w.write_all(&header_bytes(shape))?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn to_npy_bytes(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_npy(&mut out, shape, data)?;
    Ok(out)
}

pub fn features_from_npy(array: NpyArray) -> Result<FeatureTensor> {
    match array.shape[..] {
        [n, l, d] => FeatureTensor::new(n, l, d, array.data),
        _ => Err(Error::UnsupportedShape(format!(
            "{:?}; features must be (frames, tokens, dim)",
            array.shape
        ))),
    }
}

/// Accepts `(N, L)` scores or `(N, L, L)` attention matrices (column-mean reduced).
pub fn attention_from_npy(array: NpyArray) -> Result<AttentionScores> {
    match array.shape[..] {
        [n, l] => AttentionScores::new(n, l, array.data),
        [n, l, l2] if l == l2 && l > 0 => {
            let mut scores = Vec::with_capacity(n * l);
            for m in array.data.chunks_exact(l * l) {
                scores.extend(attention_from_matrix(m, l)?);
            }
            AttentionScores::new(n, l, scores)
        }
        _ => Err(Error::UnsupportedShape(format!(
            "{:?}; attention must be (frames, tokens) or (frames, tokens, tokens)",
            array.shape
        ))),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    features_from_npy(read_npy_file(path)?)
}

pub fn load_attention(path: impl AsRef<Path>) -> Result<AttentionScores> {
    attention_from_npy(read_npy_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(header: &str) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out
    }

    #[test]
    fn header_is_aligned() {
        for shape in [&[1usize][..], &[2, 4, 8], &[123456, 7]] {
            let h = header_bytes(shape);
            assert_eq!(h.len() % ALIGN, 0);
            assert_eq!(*h.last().unwrap(), b'\n');
        }
        let h = header_bytes(&[3]);
        assert!(std::str::from_utf8(&h[10..]).unwrap().contains("(3,)"));
    }

    #[test]
    fn loads_feature_shape() {
        let data: Vec<f32> = (0..64).map(|v| v as f32 * 0.5).collect();
        let bytes = to_npy_bytes(&[2, 4, 8], &data).unwrap();
        let t = features_from_npy(read_npy(&bytes).unwrap()).unwrap();
        assert_eq!((t.frames(), t.tokens_per_frame(), t.dim()), (2, 4, 8));
        assert_eq!(t.data(), &data[..]);
    }

    #[test]
    fn float64_is_unsupported_with_hint() {
        let mut bytes = raw("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }\n");
        bytes.extend_from_slice(&[0; 8]);
        match read_npy(&bytes) {
            Err(Error::UnsupportedDtype { found, hint }) => {
                assert_eq!(found, "<f8");
                assert!(hint.contains("astype"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_attention_is_column_mean_reduced() {
        // two frames of 4x4 matrices: frame 0 uniform, frame 1 all mass on column 2
        let mut data = vec![0.25f32; 16];
        for _ in 0..4 {
            for c in 0..4 {
                data.push(if c == 2 { 1.0 } else { 0.0 });
            }
        }
        let bytes = to_npy_bytes(&[2, 4, 4], &data).unwrap();
        let a = attention_from_npy(read_npy(&bytes).unwrap()).unwrap();
        assert_eq!((a.frames(), a.tokens_per_frame()), (2, 4));
        assert_eq!(a.row(0), &[0.25; 4]);
        assert_eq!(a.row(1), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn accepts_version_two_and_double_quotes() {
        let header = "{\"descr\": \"<f4\", \"fortran_order\": False, \"shape\": (2,)}\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[2, 0]);
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let a = read_npy(&bytes).unwrap();
        assert_eq!(a.shape, vec![2]);
        assert_eq!(a.data, vec![1.5, -2.0]);
    }

    #[test]
    fn wrong_rank_is_unsupported_shape() {
        let bytes = to_npy_bytes(&[2, 3], &[0.0; 6]).unwrap();
        assert!(matches!(
            features_from_npy(read_npy(&bytes).unwrap()),
            Err(Error::UnsupportedShape(_))
        ));
        let bytes = to_npy_bytes(&[2, 3, 4], &[0.0; 24]).unwrap();
        assert!(matches!(
            attention_from_npy(read_npy(&bytes).unwrap()),
            Err(Error::UnsupportedShape(_))
        ));
    }
}
