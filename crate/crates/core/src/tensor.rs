//! Tensor-level quantization: split a tensor into real and imaginary halves,
//! scale by the largest magnitude, and encode each pair as a rotation code.

use rayon::prelude::*;

use crate::codec::{decode_code, encode_pair, PlanarPoint, PrecisionConfig, RotationCode};
use crate::error::{CodecError, FormatError, TensorError};
use crate::pack::PackMode;

/// Pairs per rayon task; small tensors stay on the calling thread.
const PAR_CHUNK: usize = 4096;

/// Row-major tensor of finite binary64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape.iter().product::<usize>();
        if expected != values.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { shape, values })
    }

    /// One-dimensional tensor over `values`.
    pub fn from_vec(values: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![values.len()], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the values. Callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Real and imaginary halves of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitHalves {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    /// True when a trailing zero was appended to `imag` to even out an odd length.
    pub padded: bool,
}

/// First `ceil(n/2)` elements become the real half, the rest the imaginary
/// half, zero-padded to equal length.
pub fn split_tensor(t: &DenseTensor) -> SplitHalves {
    let n = t.len();
    let half = n.div_ceil(2);
    let real = t.values[..half].to_vec();
    let mut imag = t.values[half..].to_vec();
    let padded = imag.len() < real.len();
    if padded {
        imag.push(0.0);
    }
    SplitHalves { real, imag, padded }
}

/// Rotation codes for one tensor plus the scale needed to restore it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub lambda: u32,
    pub scale_w: f64,
    pub original_len: usize,
    pub padded: bool,
    pub shape: Vec<usize>,
    pub codes: Vec<RotationCode>,
    pub pack_mode: PackMode,
}

impl QuantizedTensor {
    /// Checks the structural invariants a decoder relies on.
    pub fn validate(&self) -> Result<PrecisionConfig, FormatError> {
        let cfg = PrecisionConfig::new(self.lambda)?;
        let expected: usize = self.shape.iter().product();
        if expected != self.original_len {
            return Err(FormatError::Malformed(format!(
                "shape {:?} holds {expected} elements but original_len is {}",
                self.shape, self.original_len
            )));
        }
        if self.codes.len() != self.original_len.div_ceil(2) {
            return Err(FormatError::Malformed(format!(
                "{} codes cannot hold {} elements",
                self.codes.len(),
                self.original_len
            )));
        }
        if self.padded != (self.original_len % 2 == 1) {
            return Err(FormatError::Malformed(
                "padding flag disagrees with element count".into(),
            ));
        }
        if !self.scale_w.is_finite() || self.scale_w < 0.0 {
            return Err(FormatError::Malformed(format!(
                "scale {} is not a finite non-negative number",
                self.scale_w
            )));
        }
        if let Some(bad) = self.codes.iter().find(|c| c.value() >= cfg.code_modulus()) {
            return Err(CodecError::CodeOutOfRange {
                code: bad.value(),
                modulus: cfg.code_modulus(),
            }
            .into());
        }
        Ok(cfg)
    }

    /// Number of tensor elements represented.
    pub fn len(&self) -> usize {
        self.original_len
    }

    pub fn is_empty(&self) -> bool {
        self.original_len == 0
    }
}

/// Quantizes a tensor with a single per-tensor scale.
pub fn quantize_tensor(t: &DenseTensor, cfg: &PrecisionConfig) -> Result<QuantizedTensor, TensorError> {
    quantize_tensor_with_mode(t, cfg, PackMode::GroupPacked)
}

pub fn quantize_tensor_with_mode(
    t: &DenseTensor,
    cfg: &PrecisionConfig,
    pack_mode: PackMode,
) -> Result<QuantizedTensor, TensorError> {
    let SplitHalves { real, imag, padded } = split_tensor(t);
    let scale_w = t.max_abs();

    let codes = if scale_w == 0.0 {
        let zero = encode_pair(PlanarPoint::ORIGIN, cfg)?;
        vec![zero; real.len()]
    } else {
        real.par_iter()
            .zip(imag.par_iter())
            .with_min_len(PAR_CHUNK)
            .map(|(&x, &y)| encode_pair(PlanarPoint::new(x / scale_w, y / scale_w), cfg))
            .collect::<Result<Vec<_>, _>>()?
    };

    Ok(QuantizedTensor {
        lambda: cfg.lambda(),
        scale_w,
        original_len: t.len(),
        padded,
        shape: t.shape().to_vec(),
        codes,
        pack_mode,
    })
}

/// Restores a tensor: decode every code, scale by `w`, concatenate the
/// halves and drop the padding.
pub fn dequantize_tensor(q: &QuantizedTensor) -> Result<DenseTensor, FormatError> {
    let cfg = q.validate()?;
    let w = q.scale_w;
    let points = q
        .codes
        .par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|&c| decode_code(c, &cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut values = Vec::with_capacity(2 * points.len());
    values.extend(points.iter().map(|p| p.x * w));
    values.extend(points.iter().map(|p| p.y * w));
    values.truncate(q.original_len);

    Ok(DenseTensor {
        shape: q.shape.clone(),
        values,
    })
}
