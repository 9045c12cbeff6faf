//! Single-pair rotation codec.
//!
//! A point `(x, y)` with `x^2 + y^2 <= 4` is written as the sum of two unit
//! rotations `e^{iθ} + e^{iπ̄θ}`. The encoder finds the two rotation angles
//! geometrically (polar angle `α` and isosceles half-angle `β`), matches the
//! fractional part of `mπ̄` against the target `Ω` by digit extraction, and
//! stores the quantized angle as the integer `m·10^λ + g`.

use std::f64::consts::{PI, TAU};

use crate::error::CodecError;

/// Decimals of π starting at the ninth decimal place, i.e. `frac(π·10^8)`.
pub const PI_TAIL: f64 = 0.358_979_323_846_264_338_327_950_288_419_716_939_94;

/// Largest supported digit budget; beyond this the digit structure of π̄
/// no longer fits in a binary64 significand.
pub const MAX_LAMBDA: u32 = 4;

/// Squared-radius tolerance above 4 accepted by the encoder, so decoded
/// points (which satisfy the radius identity only up to rounding) re-encode.
const DISK_SLACK: f64 = 64.0 * f64::EPSILON;

/// Builds the irrational coefficient `π̄ = 10^{-λ} + 10^{-2λ}·frac(π·10^8)`.
pub fn build_pibar(lambda: u32) -> Result<f64, CodecError> {
    check_lambda(lambda)?;
    let digit = 10f64.powi(-(lambda as i32));
    Ok(digit + digit * digit * PI_TAIL)
}

fn check_lambda(lambda: u32) -> Result<(), CodecError> {
    if (1..=MAX_LAMBDA).contains(&lambda) {
        Ok(())
    } else {
        Err(CodecError::LambdaOutOfRange(lambda))
    }
}

/// Digit budget together with every constant derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionConfig {
    lambda: u32,
    pibar: f64,
    digit_modulus: u64,
    code_modulus: u64,
    angle_unit: f64,
}

impl PrecisionConfig {
    pub fn new(lambda: u32) -> Result<Self, CodecError> {
        let pibar = build_pibar(lambda)?;
        Ok(Self::assemble(lambda, pibar))
    }

    /// Same digit layout, but with an arbitrary rotation coefficient in place
    /// of π̄. Only meant for ablation experiments; the digit-extraction
    /// guarantees hold for the standard coefficient alone.
    pub fn with_coefficient(lambda: u32, coefficient: f64) -> Result<Self, CodecError> {
        check_lambda(lambda)?;
        if !coefficient.is_finite() || coefficient <= 0.0 {
            return Err(CodecError::InvalidCoefficient(coefficient));
        }
        Ok(Self::assemble(lambda, coefficient))
    }

    fn assemble(lambda: u32, pibar: f64) -> Self {
        let digit_modulus = 10u64.pow(lambda);
        Self {
            lambda,
            pibar,
            digit_modulus,
            code_modulus: digit_modulus * digit_modulus,
            angle_unit: TAU / digit_modulus as f64,
        }
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn pibar(&self) -> f64 {
        self.pibar
    }

    /// `10^λ`: number of values each half of a code can take.
    pub fn digit_modulus(&self) -> u64 {
        self.digit_modulus
    }

    /// `10^{2λ}`: number of distinct rotation codes.
    pub fn code_modulus(&self) -> u64 {
        self.code_modulus
    }

    /// Angle represented by one code step, `2π·10^{-λ}` radians.
    pub fn angle_unit(&self) -> f64 {
        self.angle_unit
    }

    /// Pointwise error bound `2·angle_unit·(1 + π̄)` on each coordinate of a
    /// scaled point: one grid step lost by flooring `g` plus one lost in the
    /// second rotation through the `m` residual.
    pub fn err_max(&self) -> f64 {
        2.0 * self.angle_unit * (1.0 + self.pibar)
    }

    /// Average-error scale `2(1 + π̄)·10^{-λ}/π`.
    pub fn mean_error_scale(&self) -> f64 {
        2.0 * (1.0 + self.pibar) / (self.digit_modulus as f64 * PI)
    }

    /// Bits needed per parameter in theory, `λ·log2(10)`.
    pub fn bits_per_param(&self) -> f64 {
        self.lambda as f64 * 10f64.log2()
    }
}

/// A point in the scaled plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Largest coordinate difference to `other`.
    pub fn linf_distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Intermediates of the geometric encoder for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricSolution {
    /// Polar angle of the point, in `(-π, π]`.
    pub alpha: f64,
    /// Half-angle `arccos(r/2)`, in `[0, π/2]`.
    pub beta: f64,
    /// `(α - β) mod 2π`, the first rotation angle reduced to one turn.
    pub delta: f64,
    /// Fractional-matching target `((α + β) - π̄δ) / 2π`.
    pub omega: f64,
    pub m: u64,
    pub g: u64,
}

impl GeometricSolution {
    pub fn code(&self, cfg: &PrecisionConfig) -> RotationCode {
        RotationCode(self.m * cfg.digit_modulus + self.g)
    }
}

/// Quantized rotation angle `θ̃ = m·10^λ + g`, with `θ = θ̃·2π·10^{-λ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RotationCode(u64);

impl RotationCode {
    pub fn new(value: u64, cfg: &PrecisionConfig) -> Result<Self, CodecError> {
        if value < cfg.code_modulus {
            Ok(Self(value))
        } else {
            Err(CodecError::CodeOutOfRange {
                code: value,
                modulus: cfg.code_modulus,
            })
        }
    }

    /// Wraps a raw value without a range check; `decode_code` still rejects
    /// values outside the code set.
    pub const fn from_raw(value: u64) -> Self {
        Self(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Leading λ digits.
    pub fn m(self, cfg: &PrecisionConfig) -> u64 {
        self.0 / cfg.digit_modulus
    }

    /// Trailing λ digits.
    pub fn g(self, cfg: &PrecisionConfig) -> u64 {
        self.0 % cfg.digit_modulus
    }

    /// Unreduced rotation angle θ in radians.
    pub fn angle(self, cfg: &PrecisionConfig) -> f64 {
        self.0 as f64 * cfg.angle_unit
    }
}

/// `v - floor(v)`, always in `[0, 1)`.
pub fn frac(v: f64) -> f64 {
    let f = v - v.floor();
    // v = -tiny gives 1 - tiny, which can round up to exactly 1.
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

fn floor_digits(unit_fraction: f64, modulus: u64) -> u64 {
    let scaled = (unit_fraction * modulus as f64).floor();
    (scaled.max(0.0) as u64).min(modulus - 1)
}

/// Fractional part of `m·π̄` matched against `Ω`: `m = floor(frac(Ω)·10^λ)`.
pub fn m_from_omega(omega: f64, cfg: &PrecisionConfig) -> u64 {
    floor_digits(frac(omega), cfg.digit_modulus)
}

/// Solves the geometric system for one point.
pub fn solve_geometry(p: PlanarPoint, cfg: &PrecisionConfig) -> Result<GeometricSolution, CodecError> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(CodecError::NonFinite { x: p.x, y: p.y });
    }
    let radius_sq = p.x * p.x + p.y * p.y;
    if radius_sq > 4.0 + DISK_SLACK {
        return Err(CodecError::OutsideDisk { x: p.x, y: p.y });
    }

    let alpha = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        let a = p.y.atan2(p.x);
        if a == -PI {
            PI
        } else {
            a
        }
    };
    let beta = (p.radius() / 2.0).min(1.0).acos();

    let mut delta = (alpha - beta).rem_euclid(TAU);
    if delta >= TAU {
        delta = 0.0;
    }
    let omega = ((alpha + beta) - cfg.pibar * delta) / TAU;

    Ok(GeometricSolution {
        alpha,
        beta,
        delta,
        omega,
        m: m_from_omega(omega, cfg),
        g: floor_digits(delta / TAU, cfg.digit_modulus),
    })
}

/// Distance between `frac(m·π̄)` and `frac(Ω)` on the unit circle, in `[0, 0.5]`.
pub fn solve_m_residual(m: u64, omega: f64, cfg: &PrecisionConfig) -> f64 {
    let d = (frac(m as f64 * cfg.pibar) - frac(omega)).abs();
    d.min(1.0 - d)
}

pub fn encode_pair(p: PlanarPoint, cfg: &PrecisionConfig) -> Result<RotationCode, CodecError> {
    Ok(solve_geometry(p, cfg)?.code(cfg))
}

/// Rotation angles of the two unit vectors for `code`, each reduced to `[0, 2π)`.
pub fn rotation_angles(code: RotationCode, cfg: &PrecisionConfig) -> (f64, f64) {
    // m·10^λ·unit is a whole number of turns, so the first rotation depends
    // on g alone; the second is reduced in turns before scaling to radians.
    let first = code.g(cfg) as f64 / cfg.digit_modulus as f64 * TAU;
    let second = frac(cfg.pibar * code.0 as f64 / cfg.digit_modulus as f64) * TAU;
    (first, second)
}

pub fn decode_code(code: RotationCode, cfg: &PrecisionConfig) -> Result<PlanarPoint, CodecError> {
    if code.0 >= cfg.code_modulus {
        return Err(CodecError::CodeOutOfRange {
            code: code.0,
            modulus: cfg.code_modulus,
        });
    }
    let (first, second) = rotation_angles(code, cfg);
    let (s1, c1) = first.sin_cos();
    let (s2, c2) = second.sin_cos();
    Ok(PlanarPoint::new(c1 + c2, s1 + s2))
}

/// `‖decode(encode(p)) - p‖∞`.
pub fn roundtrip_error(p: PlanarPoint, cfg: &PrecisionConfig) -> Result<f64, CodecError> {
    let decoded = decode_code(encode_pair(p, cfg)?, cfg)?;
    Ok(decoded.linf_distance(&p))
}
