//! Bit packing of rotation codes.
//!
//! `ByteAligned` stores every code in a fixed number of whole bytes.
//! `GroupPacked` treats `G` consecutive codes as the digits of one
//! radix-`10^{2λ}` integer and stores it in the minimum number of bits, which
//! brings the cost close to `λ·log2(10)` bits per parameter.

use serde::{Deserialize, Serialize};

use crate::codec::{PrecisionConfig, RotationCode};
use crate::error::{CodecError, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackMode {
    ByteAligned,
    GroupPacked,
}

impl PackMode {
    pub fn to_byte(self) -> u8 {
        match self {
            PackMode::ByteAligned => 0,
            PackMode::GroupPacked => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, FormatError> {
        match b {
            0 => Ok(PackMode::ByteAligned),
            1 => Ok(PackMode::GroupPacked),
            other => Err(FormatError::Malformed(format!("unknown pack mode {other}"))),
        }
    }
}

/// Packed code payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    pub mode: PackMode,
    /// Codes per radix group; 1 in byte-aligned mode.
    pub group_size: u16,
    pub payload: Vec<u8>,
    pub bit_length: u64,
}

impl PackedCodes {
    pub fn bits_per_param(&self, params: usize) -> f64 {
        if params == 0 {
            0.0
        } else {
            self.bit_length as f64 / params as f64
        }
    }
}

/// Whole bytes per code in byte-aligned mode.
pub fn byte_width(lambda: u32) -> usize {
    match lambda {
        1 => 1,
        2 => 2,
        _ => 4,
    }
}

/// Largest `G` with `10^{2λG} < 2^128`, so a group fits a `u128`.
pub fn default_group_size(lambda: u32) -> u16 {
    (38 / (2 * lambda)) as u16
}

/// Bits needed for `count` codes in one radix group: the bit length of
/// `10^{2λ·count} - 1`.
pub fn group_bits(cfg: &PrecisionConfig, count: u32) -> u32 {
    if count == 0 {
        return 0;
    }
    let max = (cfg.code_modulus() as u128).pow(count) - 1;
    128 - max.leading_zeros()
}

pub fn pack_codes(codes: &[RotationCode], cfg: &PrecisionConfig, mode: PackMode) -> PackedCodes {
    match mode {
        PackMode::ByteAligned => pack_bytes(codes, cfg),
        PackMode::GroupPacked => pack_groups(codes, cfg, default_group_size(cfg.lambda())),
    }
}

fn pack_bytes(codes: &[RotationCode], cfg: &PrecisionConfig) -> PackedCodes {
    let width = byte_width(cfg.lambda());
    let mut payload = Vec::with_capacity(codes.len() * width);
    for c in codes {
        payload.extend_from_slice(&c.value().to_le_bytes()[..width]);
    }
    PackedCodes {
        mode: PackMode::ByteAligned,
        group_size: 1,
        bit_length: payload.len() as u64 * 8,
        payload,
    }
}

/// Packs with an explicit group size (at most the default for `cfg`).
pub fn pack_groups(codes: &[RotationCode], cfg: &PrecisionConfig, group_size: u16) -> PackedCodes {
    assert!(
        group_size >= 1 && group_size <= default_group_size(cfg.lambda()),
        "group size {group_size} does not fit a 128-bit accumulator"
    );
    let base = cfg.code_modulus() as u128;
    let mut writer = BitWriter::default();
    for group in codes.chunks(group_size as usize) {
        let value = group
            .iter()
            .rev()
            .fold(0u128, |acc, c| acc * base + c.value() as u128);
        writer.push(value, group_bits(cfg, group.len() as u32));
    }
    let (payload, bit_length) = writer.finish();
    PackedCodes {
        mode: PackMode::GroupPacked,
        group_size,
        payload,
        bit_length,
    }
}

pub fn unpack_codes(p: &PackedCodes, cfg: &PrecisionConfig) -> Result<Vec<RotationCode>, FormatError> {
    let expected_bytes = p.bit_length.div_ceil(8);
    if p.payload.len() as u64 != expected_bytes {
        return Err(FormatError::Malformed(format!(
            "payload holds {} bytes but bit length {} needs {expected_bytes}",
            p.payload.len(),
            p.bit_length
        )));
    }
    let codes = match p.mode {
        PackMode::ByteAligned => unpack_bytes(p, cfg)?,
        PackMode::GroupPacked => unpack_groups(p, cfg)?,
    };
    if let Some(bad) = codes.iter().find(|c| c.value() >= cfg.code_modulus()) {
        return Err(CodecError::CodeOutOfRange {
            code: bad.value(),
            modulus: cfg.code_modulus(),
        }
        .into());
    }
    Ok(codes)
}

fn unpack_bytes(p: &PackedCodes, cfg: &PrecisionConfig) -> Result<Vec<RotationCode>, FormatError> {
    let width = byte_width(cfg.lambda());
    if !p.payload.len().is_multiple_of(width) {
        return Err(FormatError::Malformed(format!(
            "{} payload bytes is not a multiple of the {width}-byte code width",
            p.payload.len()
        )));
    }
    Ok(p.payload
        .chunks_exact(width)
        .map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..width].copy_from_slice(chunk);
            RotationCode::from_raw(u64::from_le_bytes(buf))
        })
        .collect())
}

fn unpack_groups(p: &PackedCodes, cfg: &PrecisionConfig) -> Result<Vec<RotationCode>, FormatError> {
    let group_size = p.group_size as u32;
    if group_size == 0 || group_size > default_group_size(cfg.lambda()) as u32 {
        return Err(FormatError::Malformed(format!(
            "group size {group_size} is invalid for lambda={}",
            cfg.lambda()
        )));
    }
    let full_bits = group_bits(cfg, group_size) as u64;
    let full_groups = p.bit_length / full_bits;
    let rest_bits = p.bit_length % full_bits;
    // Partial-group widths are strictly increasing, so the remainder
    // identifies the size of the trailing group.
    let tail = if rest_bits == 0 {
        0
    } else {
        (1..group_size)
            .find(|&k| group_bits(cfg, k) as u64 == rest_bits)
            .ok_or_else(|| {
                FormatError::Malformed(format!(
                    "bit length {} does not decompose into groups of {group_size}",
                    p.bit_length
                ))
            })?
    };

    let base = cfg.code_modulus() as u128;
    let mut reader = BitReader::new(&p.payload);
    let mut codes = Vec::with_capacity((full_groups * group_size as u64 + tail as u64) as usize);
    let sizes = std::iter::repeat_n(group_size, full_groups as usize).chain((tail > 0).then_some(tail));
    for count in sizes {
        let mut value = reader.take(group_bits(cfg, count));
        for _ in 0..count {
            codes.push(RotationCode::from_raw((value % base) as u64));
            value /= base;
        }
        if value != 0 {
            return Err(FormatError::Malformed(
                "radix group overflows its code count".into(),
            ));
        }
    }
    Ok(codes)
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    /// Appends the low `width` bits of `value`, least significant first.
    fn push(&mut self, value: u128, width: u32) {
        for i in 0..width {
            let bit = ((value >> i) & 1) as u8;
            let pos = self.bits;
            if pos.is_multiple_of(8) {
                self.bytes.push(0);
            }
            *self.bytes.last_mut().unwrap() |= bit << (pos % 8);
            self.bits += 1;
        }
    }

    fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bits)
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, width: u32) -> u128 {
        let mut value = 0u128;
        for i in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (self.pos % 8)) & 1;
            value |= (bit as u128) << i;
            self.pos += 1;
        }
        value
    }
}
