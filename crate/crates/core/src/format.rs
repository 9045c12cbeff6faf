//! On-disk containers.
//!
//! Dense tensors (`.pqtd`):
//!
//! ```text
//! "PQTD" | version u8 = 1 | dtype u8 = 0 (binary64) | rank u8 | dims u64 * rank | values f64 LE
//! ```
//!
//! Quantized tensors (`.piqt`):
//!
//! ```text
//! "PIQT" | version u8 = 1 | lambda u8 | pack_mode u8 | padded u8 | group_size u16
//!        | rank u8 | dims u64 * rank | original_len u64 | scale_w f64
//!        | payload_bit_length u64 | payload bytes
//! ```
//!
//! All integers are little-endian. Writes go to a temporary file in the
//! destination directory and are renamed into place on success.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codec::PrecisionConfig;
use crate::error::FormatError;
use crate::pack::{pack_codes, unpack_codes, PackMode, PackedCodes};
use crate::tensor::{DenseTensor, QuantizedTensor};

pub const DENSE_MAGIC: [u8; 4] = *b"PQTD";
pub const QUANT_MAGIC: [u8; 4] = *b"PIQT";
pub const VERSION: u8 = 1;
const DTYPE_F64: u8 = 0;

pub fn encode_dense(t: &DenseTensor) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(8 + 8 * t.shape().len() + 8 * t.len());
    out.extend_from_slice(&DENSE_MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F64);
    push_dims(&mut out, t.shape())?;
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dense(bytes: &[u8]) -> Result<DenseTensor, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(DENSE_MAGIC)?;
    r.version()?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F64 {
        return Err(FormatError::Malformed(format!("unsupported dtype {dtype}")));
    }
    let shape = r.dims()?;
    let n = element_count(&shape)?;
    let needed = n
        .checked_mul(8)
        .ok_or_else(|| FormatError::Malformed("tensor too large".into()))?;
    let raw = r.take(needed)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    DenseTensor::new(shape, values).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn encode_quantized(q: &QuantizedTensor) -> Result<Vec<u8>, FormatError> {
    let cfg = q.validate()?;
    let packed = pack_codes(&q.codes, &cfg, q.pack_mode);
    let mut out = Vec::with_capacity(48 + packed.payload.len());
    out.extend_from_slice(&QUANT_MAGIC);
    out.push(VERSION);
    out.push(q.lambda as u8);
    out.push(q.pack_mode.to_byte());
    out.push(q.padded as u8);
    out.extend_from_slice(&packed.group_size.to_le_bytes());
    push_dims(&mut out, &q.shape)?;
    out.extend_from_slice(&(q.original_len as u64).to_le_bytes());
    out.extend_from_slice(&q.scale_w.to_le_bytes());
    out.extend_from_slice(&packed.bit_length.to_le_bytes());
    out.extend_from_slice(&packed.payload);
    Ok(out)
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedTensor, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(QUANT_MAGIC)?;
    r.version()?;
    let lambda = r.u8()? as u32;
    let cfg = PrecisionConfig::new(lambda)?;
    let mode = PackMode::from_byte(r.u8()?)?;
    let padded = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(FormatError::Malformed(format!("padding flag {other}"))),
    };
    let group_size = r.u16()?;
    let shape = r.dims()?;
    let original_len = usize::try_from(r.u64()?)
        .map_err(|_| FormatError::Malformed("element count overflows usize".into()))?;
    let scale_w = r.f64()?;
    let bit_length = r.u64()?;
    let payload_len = usize::try_from(bit_length.div_ceil(8))
        .map_err(|_| FormatError::Malformed("payload too large".into()))?;
    let payload = r.take(payload_len)?.to_vec();
    r.finish()?;

    let packed = PackedCodes {
        mode,
        group_size,
        payload,
        bit_length,
    };
    let codes = unpack_codes(&packed, &cfg)?;
    let q = QuantizedTensor {
        lambda,
        scale_w,
        original_len,
        padded,
        shape,
        codes,
        pack_mode: mode,
    };
    q.validate()?;
    Ok(q)
}

pub fn write_dense(path: impl AsRef<Path>, t: &DenseTensor) -> Result<(), FormatError> {
    write_atomic(path.as_ref(), &encode_dense(t)?)
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<DenseTensor, FormatError> {
    decode_dense(&fs::read(path)?)
}

pub fn write_quantized(path: impl AsRef<Path>, q: &QuantizedTensor) -> Result<(), FormatError> {
    write_atomic(path.as_ref(), &encode_quantized(q)?)
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor, FormatError> {
    decode_quantized(&fs::read(path)?)
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| FormatError::Io(e.error))?;
    Ok(())
}

fn push_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<(), FormatError> {
    let rank = u8::try_from(dims.len())
        .map_err(|_| FormatError::Malformed(format!("rank {} exceeds 255", dims.len())))?;
    out.push(rank);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

fn element_count(shape: &[usize]) -> Result<usize, FormatError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Malformed(format!("shape {shape:?} overflows")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<(), FormatError> {
        match self.u8()? {
            VERSION => Ok(()),
            other => Err(FormatError::UnsupportedVersion(other)),
        }
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<Vec<usize>, FormatError> {
        let rank = self.u8()?;
        (0..rank)
            .map(|_| {
                usize::try_from(self.u64()?)
                    .map_err(|_| FormatError::Malformed("dimension overflows usize".into()))
            })
            .collect()
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}
