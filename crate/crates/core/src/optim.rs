//! Adam with full-precision and quantized moments, plus SGD and a uniform
//! linear-quantization baseline.
//!
//! Quantized variants follow the same loop as plain Adam: restore both
//! moments, run the full-precision update, then re-quantize the biased
//! moments after the parameter update.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::PrecisionConfig;
use crate::error::{OptimError, TensorError};
use crate::format::{read_quantized, write_atomic, write_quantized};
use crate::tensor::{dequantize_tensor, quantize_tensor, DenseTensor, QuantizedTensor};

/// How the Adam moments are stored between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantMode {
    None,
    PiQuant { lambda: u32 },
    LinearQuant { bits: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub quant_mode: QuantMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            quant_mode: QuantMode::None,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_quant_mode(mut self, mode: QuantMode) -> Self {
        self.quant_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name}={b} must lie in [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be finite and > 0", self.epsilon));
        }
        match self.quant_mode {
            QuantMode::PiQuant { lambda } => {
                PrecisionConfig::new(lambda).map_err(|e| OptimError::InvalidConfig(e.to_string()))?;
            }
            QuantMode::LinearQuant { bits } if !(2..=16).contains(&bits) => {
                return bad(format!("linear quantization bits {bits} must lie in [2, 16]"));
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_step_inputs(params: &DenseTensor, grads: &DenseTensor) -> Result<(), OptimError> {
    if params.shape() != grads.shape() {
        return Err(OptimError::ShapeMismatch {
            params: params.shape().to_vec(),
            grads: grads.shape().to_vec(),
        });
    }
    if let Some((index, &value)) = grads.values().iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index, value });
    }
    Ok(())
}

/// In-place Adam arithmetic shared by every moment representation.
fn adam_kernel(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Full-precision moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: DenseTensor,
    pub v: DenseTensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: DenseTensor::zeros(shape.to_vec()),
            v: DenseTensor::zeros(shape.to_vec()),
            t: 0,
        }
    }
}

pub fn adam_step(
    params: &mut DenseTensor,
    grads: &DenseTensor,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    check_step_inputs(params, grads)?;
    if state.m.shape() != params.shape() || state.v.shape() != params.shape() {
        return Err(OptimError::ShapeMismatch {
            params: params.shape().to_vec(),
            grads: state.m.shape().to_vec(),
        });
    }
    state.t += 1;
    adam_kernel(
        params.values_mut(),
        grads.values(),
        state.m.values_mut(),
        state.v.values_mut(),
        state.t,
        cfg,
    );
    Ok(())
}

/// Storage format for an optimizer moment.
pub trait MomentCodec {
    type Stored: Clone;

    fn store(&self, t: &DenseTensor) -> Result<Self::Stored, OptimError>;
    fn restore(&self, s: &Self::Stored) -> Result<DenseTensor, OptimError>;
}

/// Rotation-code quantization of a moment tensor.
#[derive(Debug, Clone, Copy)]
pub struct PiQuantCodec {
    cfg: PrecisionConfig,
}

impl PiQuantCodec {
    pub fn new(lambda: u32) -> Result<Self, OptimError> {
        let cfg = PrecisionConfig::new(lambda).map_err(TensorError::from)?;
        Ok(Self { cfg })
    }

    pub fn precision(&self) -> &PrecisionConfig {
        &self.cfg
    }
}

impl MomentCodec for PiQuantCodec {
    type Stored = QuantizedTensor;

    fn store(&self, t: &DenseTensor) -> Result<QuantizedTensor, OptimError> {
        Ok(quantize_tensor(t, &self.cfg)?)
    }

    fn restore(&self, s: &QuantizedTensor) -> Result<DenseTensor, OptimError> {
        Ok(dequantize_tensor(s)?)
    }
}

/// Uniform min/max quantization, refit on every store.
#[derive(Debug, Clone, Copy)]
pub struct LinearCodec {
    pub bits: u32,
}

impl MomentCodec for LinearCodec {
    type Stored = LinearQuantTensor;

    fn store(&self, t: &DenseTensor) -> Result<LinearQuantTensor, OptimError> {
        linear_quantize(t, self.bits)
    }

    fn restore(&self, s: &LinearQuantTensor) -> Result<DenseTensor, OptimError> {
        Ok(linear_dequantize(s))
    }
}

/// Stores moments untouched. Makes the quantized loop collapse to plain Adam.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl MomentCodec for IdentityCodec {
    type Stored = DenseTensor;

    fn store(&self, t: &DenseTensor) -> Result<DenseTensor, OptimError> {
        Ok(t.clone())
    }

    fn restore(&self, s: &DenseTensor) -> Result<DenseTensor, OptimError> {
        Ok(s.clone())
    }
}

/// Moments held in a codec's storage form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedAdamState<S> {
    pub m: S,
    pub v: S,
    pub t: u64,
}

impl<S: Clone> QuantizedAdamState<S> {
    /// `m_0 = Quant(0)`, `v_0 = Quant(0)`, `t = 0`.
    pub fn new<C: MomentCodec<Stored = S>>(codec: &C, shape: &[usize]) -> Result<Self, OptimError> {
        let zero = codec.store(&DenseTensor::zeros(shape.to_vec()))?;
        Ok(Self {
            m: zero.clone(),
            v: zero,
            t: 0,
        })
    }
}

/// Restores a stored second moment, clamping the slightly negative values a
/// lossy codec can produce near zero.
pub fn restore_second_moment<C: MomentCodec>(
    codec: &C,
    stored: &C::Stored,
) -> Result<DenseTensor, OptimError> {
    let mut v = codec.restore(stored)?;
    for x in v.values_mut() {
        *x = x.max(0.0);
    }
    Ok(v)
}

pub fn quantized_adam_step<C: MomentCodec>(
    params: &mut DenseTensor,
    grads: &DenseTensor,
    state: &mut QuantizedAdamState<C::Stored>,
    codec: &C,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    check_step_inputs(params, grads)?;
    let mut m = codec.restore(&state.m)?;
    let mut v = restore_second_moment(codec, &state.v)?;
    if m.shape() != params.shape() || v.shape() != params.shape() {
        return Err(OptimError::ShapeMismatch {
            params: params.shape().to_vec(),
            grads: m.shape().to_vec(),
        });
    }
    // Work on a copy so a step whose state overflows leaves everything untouched.
    let t = state.t + 1;
    let mut next = params.values().to_vec();
    adam_kernel(&mut next, grads.values(), m.values_mut(), v.values_mut(), t, cfg);
    for (moment, values) in [("m", m.values()), ("v", v.values()), ("params", &next[..])] {
        if let Some(index) = values.iter().position(|x| !x.is_finite()) {
            return Err(OptimError::StateOverflow { moment, index });
        }
    }
    let (stored_m, stored_v) = (codec.store(&m)?, codec.store(&v)?);
    params.values_mut().copy_from_slice(&next);
    state.m = stored_m;
    state.v = stored_v;
    state.t = t;
    Ok(())
}

/// Adam step with rotation-quantized moments at the λ given by `cfg.quant_mode`.
pub fn pi_adam_step(
    params: &mut DenseTensor,
    grads: &DenseTensor,
    state: &mut QuantizedAdamState<QuantizedTensor>,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    let QuantMode::PiQuant { lambda } = cfg.quant_mode else {
        return Err(OptimError::InvalidConfig(format!(
            "pi_adam_step needs quant_mode=pi_quant, got {:?}",
            cfg.quant_mode
        )));
    };
    quantized_adam_step(params, grads, state, &PiQuantCodec::new(lambda)?, cfg)
}

pub fn sgd_step(params: &mut DenseTensor, grads: &DenseTensor, lr: f64) -> Result<(), OptimError> {
    check_step_inputs(params, grads)?;
    for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Uniform `bits`-bit quantization over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQuantTensor {
    pub bits: u32,
    pub lo: f64,
    pub hi: f64,
    pub codes: Vec<u32>,
    pub shape: Vec<usize>,
}

impl LinearQuantTensor {
    fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }
}

pub fn linear_quantize(t: &DenseTensor, bits: u32) -> Result<LinearQuantTensor, OptimError> {
    if !(2..=16).contains(&bits) {
        return Err(OptimError::InvalidConfig(format!(
            "linear quantization bits {bits} must lie in [2, 16]"
        )));
    }
    let (lo, hi) = t
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = if t.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let levels = ((1u32 << bits) - 1) as f64;
    let range = hi - lo;
    let codes = t
        .values()
        .iter()
        .map(|&v| {
            if range == 0.0 {
                0
            } else {
                ((v - lo) / range * levels).round().clamp(0.0, levels) as u32
            }
        })
        .collect();
    Ok(LinearQuantTensor {
        bits,
        lo,
        hi,
        codes,
        shape: t.shape().to_vec(),
    })
}

pub fn linear_dequantize(q: &LinearQuantTensor) -> DenseTensor {
    let levels = q.levels();
    let step = (q.hi - q.lo) / levels as f64;
    let values = q
        .codes
        .iter()
        .map(|&c| {
            if c >= levels {
                q.hi
            } else {
                (q.lo + c as f64 * step).min(q.hi)
            }
        })
        .collect();
    DenseTensor::new(q.shape.clone(), values).expect("linear codes match their shape")
}

/// Which optimizer drives a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    PiAdam { lambda: u32 },
    LinearAdam { bits: u32 },
}

impl OptimizerKind {
    /// Short label used in CSV output: `sgd`, `adam`, `pi_adam2`, `linear_adam8`.
    pub fn label(&self) -> String {
        match self {
            OptimizerKind::Sgd => "sgd".into(),
            OptimizerKind::Adam => "adam".into(),
            OptimizerKind::PiAdam { lambda } => format!("pi_adam{lambda}"),
            OptimizerKind::LinearAdam { bits } => format!("linear_adam{bits}"),
        }
    }

    pub fn quant_mode(&self) -> QuantMode {
        match *self {
            OptimizerKind::PiAdam { lambda } => QuantMode::PiQuant { lambda },
            OptimizerKind::LinearAdam { bits } => QuantMode::LinearQuant { bits },
            _ => QuantMode::None,
        }
    }
}

#[derive(Debug, Clone)]
enum OptimizerState {
    Sgd,
    Adam(AdamState),
    Pi(QuantizedAdamState<QuantizedTensor>, PiQuantCodec),
    Linear(QuantizedAdamState<LinearQuantTensor>, LinearCodec),
}

/// One optimizer bound to one parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    cfg: AdamConfig,
    state: OptimizerState,
    steps: u64,
}

impl Optimizer {
    /// SGD uses `cfg.learning_rate` and ignores the remaining fields.
    pub fn new(kind: OptimizerKind, cfg: AdamConfig, shape: &[usize]) -> Result<Self, OptimError> {
        let cfg = cfg.with_quant_mode(kind.quant_mode());
        cfg.validate()?;
        let state = match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam(AdamState::new(shape)),
            OptimizerKind::PiAdam { lambda } => {
                let codec = PiQuantCodec::new(lambda)?;
                OptimizerState::Pi(QuantizedAdamState::new(&codec, shape)?, codec)
            }
            OptimizerKind::LinearAdam { bits } => {
                let codec = LinearCodec { bits };
                OptimizerState::Linear(QuantizedAdamState::new(&codec, shape)?, codec)
            }
        };
        Ok(Self {
            kind,
            cfg,
            state,
            steps: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut DenseTensor, grads: &DenseTensor) -> Result<(), OptimError> {
        match &mut self.state {
            OptimizerState::Sgd => sgd_step(params, grads, self.cfg.learning_rate)?,
            OptimizerState::Adam(s) => adam_step(params, grads, s, &self.cfg)?,
            OptimizerState::Pi(s, codec) => quantized_adam_step(params, grads, s, codec, &self.cfg)?,
            OptimizerState::Linear(s, codec) => quantized_adam_step(params, grads, s, codec, &self.cfg)?,
        }
        self.steps += 1;
        Ok(())
    }
}

pub const STATE_SCHEMA: &str = "piquant.optimizer_state/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateManifest {
    pub schema: String,
    pub t: u64,
    pub config: AdamConfig,
}

/// Writes `m.piqt`, `v.piqt` and `state.json` into `dir`.
pub fn save_pi_state(
    dir: impl AsRef<Path>,
    state: &QuantizedAdamState<QuantizedTensor>,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    let dir = dir.as_ref();
    write_quantized(dir.join("m.piqt"), &state.m)?;
    write_quantized(dir.join("v.piqt"), &state.v)?;
    let manifest = StateManifest {
        schema: STATE_SCHEMA.into(),
        t: state.t,
        config: *cfg,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join("state.json"), &json)?;
    Ok(())
}

pub fn load_pi_state(
    dir: impl AsRef<Path>,
) -> Result<(QuantizedAdamState<QuantizedTensor>, AdamConfig), OptimError> {
    let dir = dir.as_ref();
    let bytes = fs::read(dir.join("state.json")).map_err(crate::error::FormatError::from)?;
    let manifest: StateManifest = serde_json::from_slice(&bytes)?;
    if manifest.schema != STATE_SCHEMA {
        return Err(OptimError::InvalidConfig(format!(
            "unknown state schema {:?}",
            manifest.schema
        )));
    }
    manifest.config.validate()?;
    let m = read_quantized(dir.join("m.piqt"))?;
    let v = read_quantized(dir.join("v.piqt"))?;
    Ok((QuantizedAdamState { m, v, t: manifest.t }, manifest.config))
}
