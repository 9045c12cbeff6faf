//! Irrational-rotation quantization of optimizer state.
//!
//! Pairs of values are mapped onto a single quantized rotation angle of
//! `e^{iθ} + e^{iπ̄θ}`, costing about `λ·log2(10)` bits per value. The crate
//! provides the pair codec, tensor containers, Adam variants whose moments
//! are stored in that form, tooling for measuring codec error, and small
//! optimization benchmarks.

pub mod bench;
pub mod codec;
pub mod error;
pub mod format;
pub mod lab;
pub mod optim;
pub mod pack;
pub mod tensor;

pub use codec::{
    build_pibar, decode_code, encode_pair, m_from_omega, roundtrip_error, solve_geometry, solve_m_residual,
    GeometricSolution, PlanarPoint, PrecisionConfig, RotationCode,
};
pub use error::{CodecError, FormatError, OptimError, TensorError};
pub use pack::{pack_codes, unpack_codes, PackMode, PackedCodes};
pub use tensor::{dequantize_tensor, quantize_tensor, split_tensor, DenseTensor, QuantizedTensor};
