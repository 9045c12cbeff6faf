//! Small optimization benchmarks: Himmelblau descent and toy MLP training
//! with hand-written backpropagation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{OptimError, TensorError};
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};
use crate::tensor::DenseTensor;

/// Coordinates beyond this magnitude mark a run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("batch of {rows} rows does not match width {width}: {len} values")]
    BatchShape { rows: usize, width: usize, len: usize },
    #[error("model expects input width {expected}, got {actual}")]
    InputWidth { expected: usize, actual: usize },
    #[error("model needs at least an input and an output layer")]
    TooFewLayers,
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn himmelblau(x: f64, y: f64) -> f64 {
    let a = x * x + y - 11.0;
    let b = x + y * y - 7.0;
    a * a + b * b
}

pub fn himmelblau_grad(x: f64, y: f64) -> (f64, f64) {
    let a = x * x + y - 11.0;
    let b = x + y * y - 7.0;
    (4.0 * x * a + 2.0 * b, 2.0 * a + 4.0 * y * b)
}

/// One basin each for the four minima.
pub const DEFAULT_STARTS: [(f64, f64); 4] = [(0.0, 0.0), (0.0, -5.0), (-4.0, 4.0), (4.0, -1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentRun {
    pub optimizer: String,
    pub start: (f64, f64),
    pub steps: usize,
    /// `(x, y, f)` before the first step and after every step.
    pub trajectory: Vec<(f64, f64, f64)>,
    pub final_f: f64,
    /// Set when a coordinate left `±DIVERGENCE_LIMIT`; the trajectory stops there.
    pub diverged: bool,
}

impl DescentRun {
    pub const CSV_HEADER: &'static str = "step,x,y,f,optimizer,start_id";

    pub fn csv_rows(&self, start_id: usize) -> impl Iterator<Item = String> + '_ {
        self.trajectory
            .iter()
            .enumerate()
            .map(move |(i, (x, y, f))| format!("{i},{x:e},{y:e},{f:e},{},{start_id}", self.optimizer))
    }
}

/// Minimizes Himmelblau's function from `start`.
pub fn run_descent(
    kind: OptimizerKind,
    cfg: AdamConfig,
    start: (f64, f64),
    steps: usize,
) -> Result<DescentRun, BenchError> {
    let mut params = DenseTensor::from_vec(vec![start.0, start.1])?;
    let mut opt = Optimizer::new(kind, cfg, params.shape())?;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push((start.0, start.1, himmelblau(start.0, start.1)));
    let mut diverged = false;
    for _ in 0..steps {
        let (x, y) = (params.values()[0], params.values()[1]);
        let (gx, gy) = himmelblau_grad(x, y);
        if !gx.is_finite() || !gy.is_finite() {
            diverged = true;
            break;
        }
        opt.step(&mut params, &DenseTensor::from_vec(vec![gx, gy])?)?;
        let (x, y) = (params.values()[0], params.values()[1]);
        if !(x.abs() <= DIVERGENCE_LIMIT && y.abs() <= DIVERGENCE_LIMIT) {
            diverged = true;
            break;
        }
        trajectory.push((x, y, himmelblau(x, y)));
    }
    let final_f = trajectory.last().map_or(f64::NAN, |t| t.2);
    Ok(DescentRun {
        optimizer: kind.label(),
        start,
        steps,
        trajectory,
        final_f,
        diverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over all output entries of the squared difference.
    Mse,
    /// Softmax cross-entropy against one-hot targets, averaged over rows.
    CrossEntropy,
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub sizes: Vec<usize>,
    /// `weights[l]` has shape `[sizes[l + 1], sizes[l]]`.
    pub weights: Vec<DenseTensor>,
    pub biases: Vec<DenseTensor>,
}

/// Gradients laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DenseTensor>,
    pub biases: Vec<DenseTensor>,
}

impl ToyModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self, BenchError> {
        if sizes.len() < 2 {
            return Err(BenchError::TooFewLayers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let values = (0..fan_in * fan_out).map(|_| rng.sample(dist)).collect();
            weights.push(DenseTensor::new(vec![fan_out, fan_in], values)?);
            biases.push(DenseTensor::zeros(vec![fan_out]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, BenchError> {
        let mut m = Self::init(sizes, 0)?;
        for w in &mut m.weights {
            w.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn check_batch(&self, inputs: &[f64], rows: usize) -> Result<(), BenchError> {
        if inputs.len() != rows * self.input_width() {
            return Err(BenchError::BatchShape {
                rows,
                width: self.input_width(),
                len: inputs.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, inputs: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = vec![inputs.to_vec()];
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.weights[l].values();
            let b = self.biases[l].values();
            let prev = &acts[l];
            let mut out = vec![0.0; rows * fan_out];
            for r in 0..rows {
                let x = &prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    out[r * fan_out + o] = if l + 1 < layers { z.tanh() } else { z };
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Raw outputs, `rows x output_width`, row-major.
    pub fn forward(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, BenchError> {
        self.check_batch(inputs, rows)?;
        Ok(self.activations(inputs, rows).pop().unwrap())
    }

    pub fn loss(&self, inputs: &[f64], targets: &[f64], rows: usize, loss: Loss) -> Result<f64, BenchError> {
        let out = self.forward(inputs, rows)?;
        self.check_targets(targets, rows)?;
        Ok(loss_and_output_grad(&out, targets, rows, self.output_width(), loss).0)
    }

    fn check_targets(&self, targets: &[f64], rows: usize) -> Result<(), BenchError> {
        if targets.len() != rows * self.output_width() {
            return Err(BenchError::BatchShape {
                rows,
                width: self.output_width(),
                len: targets.len(),
            });
        }
        Ok(())
    }

    /// Mean loss over the batch and its gradient for every parameter.
    pub fn backward(
        &self,
        inputs: &[f64],
        targets: &[f64],
        rows: usize,
        loss: Loss,
    ) -> Result<(f64, Gradients), BenchError> {
        self.check_batch(inputs, rows)?;
        self.check_targets(targets, rows)?;
        let acts = self.activations(inputs, rows);
        let layers = self.weights.len();
        let (value, mut delta) =
            loss_and_output_grad(&acts[layers], targets, rows, self.output_width(), loss);

        let mut gw = vec![Vec::new(); layers];
        let mut gb = vec![Vec::new(); layers];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let mut dw = vec![0.0; fan_out * fan_in];
            let mut db = vec![0.0; fan_out];
            for r in 0..rows {
                for o in 0..fan_out {
                    let d = delta[r * fan_out + o];
                    db[o] += d;
                    for i in 0..fan_in {
                        dw[o * fan_in + i] += d * prev[r * fan_in + i];
                    }
                }
            }
            if l > 0 {
                let w = self.weights[l].values();
                let mut next = vec![0.0; rows * fan_in];
                for r in 0..rows {
                    for i in 0..fan_in {
                        let back: f64 = (0..fan_out)
                            .map(|o| delta[r * fan_out + o] * w[o * fan_in + i])
                            .sum();
                        let a = prev[r * fan_in + i];
                        next[r * fan_in + i] = back * (1.0 - a * a);
                    }
                }
                delta = next;
            }
            gw[l] = dw;
            gb[l] = db;
        }

        let weights = gw
            .into_iter()
            .zip(&self.weights)
            .map(|(g, w)| DenseTensor::new(w.shape().to_vec(), g))
            .collect::<Result<_, _>>()?;
        let biases = gb
            .into_iter()
            .zip(&self.biases)
            .map(|(g, b)| DenseTensor::new(b.shape().to_vec(), g))
            .collect::<Result<_, _>>()?;
        Ok((value, Gradients { weights, biases }))
    }

    /// Weights then biases, layer by layer.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut DenseTensor> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &DenseTensor> {
        self.weights.iter().chain(self.biases.iter())
    }
}

/// Mean loss and `∂loss/∂output` for a batch.
fn loss_and_output_grad(
    out: &[f64],
    targets: &[f64],
    rows: usize,
    width: usize,
    loss: Loss,
) -> (f64, Vec<f64>) {
    match loss {
        Loss::Mse => {
            let n = (rows * width) as f64;
            let value = out.iter().zip(targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
            let grad = out.iter().zip(targets).map(|(o, t)| 2.0 * (o - t) / n).collect();
            (value, grad)
        }
        Loss::CrossEntropy => {
            let mut value = 0.0;
            let mut grad = vec![0.0; out.len()];
            for r in 0..rows {
                let z = &out[r * width..(r + 1) * width];
                let t = &targets[r * width..(r + 1) * width];
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let log_norm = max + sum.ln();
                for k in 0..width {
                    let p = (z[k] - log_norm).exp();
                    value -= t[k] * (z[k] - log_norm);
                    grad[r * width + k] = (p - t[k]) / rows as f64;
                }
            }
            (value / rows as f64, grad)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTask {
    /// `y = sin(3x) + 0.05·N(0, 1)` for `x ~ U(-1, 1)`.
    Regression,
    /// Two interleaved half circles with Gaussian jitter, two classes.
    TwoMoons,
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyTask::Regression => "regression",
            ToyTask::TwoMoons => "two_moons",
        })
    }
}

impl FromStr for ToyTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(ToyTask::Regression),
            "two_moons" | "two-moons" | "classification" => Ok(ToyTask::TwoMoons),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// Generated dataset: row-major inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub rows: usize,
    pub input_width: usize,
    pub target_width: usize,
}

pub const TOY_ROWS: usize = 256;
pub const TOY_BATCH: usize = 32;

impl ToyTask {
    pub fn dataset(self, rows: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DA7A);
        match self {
            ToyTask::Regression => {
                let u = Uniform::new(-1.0, 1.0).expect("non-empty range");
                let mut inputs = Vec::with_capacity(rows);
                let mut targets = Vec::with_capacity(rows);
                for _ in 0..rows {
                    let x: f64 = rng.sample(u);
                    let noise: f64 = rng.sample(StandardNormal);
                    inputs.push(x);
                    targets.push((3.0 * x).sin() + 0.05 * noise);
                }
                Dataset {
                    inputs,
                    targets,
                    rows,
                    input_width: 1,
                    target_width: 1,
                }
            }
            ToyTask::TwoMoons => {
                let u = Uniform::new(0.0, std::f64::consts::PI).expect("non-empty range");
                let mut inputs = Vec::with_capacity(rows * 2);
                let mut targets = Vec::with_capacity(rows * 2);
                for r in 0..rows {
                    let t: f64 = rng.sample(u);
                    let (x, y, class) = if r % 2 == 0 {
                        (t.cos(), t.sin(), 0)
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin(), 1)
                    };
                    let jx: f64 = rng.sample(StandardNormal);
                    let jy: f64 = rng.sample(StandardNormal);
                    inputs.extend([x + 0.1 * jx - 0.5, y + 0.1 * jy - 0.25]);
                    targets.extend(if class == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
                }
                Dataset {
                    inputs,
                    targets,
                    rows,
                    input_width: 2,
                    target_width: 2,
                }
            }
        }
    }

    pub fn layer_sizes(self) -> Vec<usize> {
        match self {
            ToyTask::Regression => vec![1, 16, 16, 1],
            ToyTask::TwoMoons => vec![2, 16, 2],
        }
    }

    pub fn loss(self) -> Loss {
        match self {
            ToyTask::Regression => Loss::Mse,
            ToyTask::TwoMoons => Loss::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub task: ToyTask,
    pub optimizer: String,
    pub seed: u64,
    /// Full-dataset loss before training, then after every epoch.
    pub losses: Vec<f64>,
    pub diverged: bool,
}

impl TrainRun {
    pub const CSV_HEADER: &'static str = "epoch,loss,optimizer,lambda,seed";

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    /// `lambda` is empty for optimizers without a digit budget.
    pub fn csv_rows(&self, lambda: Option<u32>) -> impl Iterator<Item = String> + '_ {
        let lambda = lambda.map(|l| l.to_string()).unwrap_or_default();
        self.losses
            .iter()
            .enumerate()
            .map(move |(e, l)| format!("{e},{l:e},{},{lambda},{}", self.optimizer, self.seed))
    }
}

/// Minibatch training on a generated task; deterministic in `seed`.
pub fn train_toy(
    task: ToyTask,
    kind: OptimizerKind,
    cfg: AdamConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainRun, BenchError> {
    let data = task.dataset(TOY_ROWS, seed);
    let mut model = ToyModel::init(&task.layer_sizes(), seed)?;
    let mut optimizers = model
        .weights
        .iter()
        .chain(model.biases.iter())
        .map(|p| Optimizer::new(kind, cfg, p.shape()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = task.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.rows).collect();
    let mut losses = vec![model.loss(&data.inputs, &data.targets, data.rows, loss)?];
    let mut diverged = false;

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(TOY_BATCH) {
            let mut xs = Vec::with_capacity(batch.len() * data.input_width);
            let mut ts = Vec::with_capacity(batch.len() * data.target_width);
            for &r in batch {
                xs.extend_from_slice(&data.inputs[r * data.input_width..(r + 1) * data.input_width]);
                ts.extend_from_slice(&data.targets[r * data.target_width..(r + 1) * data.target_width]);
            }
            let (_, grads) = model.backward(&xs, &ts, batch.len(), loss)?;
            let grads: Vec<DenseTensor> = grads.tensors().cloned().collect();
            for ((p, g), opt) in model.parameters_mut().zip(&grads).zip(&mut optimizers) {
                opt.step(p, g)?;
            }
        }
        let l = model.loss(&data.inputs, &data.targets, data.rows, loss)?;
        losses.push(l);
        if !l.is_finite() || l > DIVERGENCE_LIMIT {
            diverged = true;
            break;
        }
    }

    Ok(TrainRun {
        task,
        optimizer: kind.label(),
        seed,
        losses,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn himmelblau_values() {
        assert_eq!(himmelblau(3.0, 2.0), 0.0);
        assert_eq!(himmelblau_grad(3.0, 2.0), (0.0, 0.0));
        assert_eq!(himmelblau(0.0, 0.0), 170.0);
    }

    #[test]
    fn descent_from_minimum_stays() {
        let run = run_descent(
            OptimizerKind::Adam,
            AdamConfig::default().with_learning_rate(0.01),
            (3.0, 2.0),
            50,
        )
        .unwrap();
        assert_eq!(run.trajectory.len(), 51);
        assert!(run.final_f < 1e-12);
        assert!(!run.diverged);
    }

    #[test]
    fn sgd_divergence_is_flagged() {
        let run = run_descent(
            OptimizerKind::Sgd,
            AdamConfig::default().with_learning_rate(1.0),
            (5.0, 5.0),
            100,
        )
        .unwrap();
        assert!(run.diverged);
        assert!(run.trajectory.len() < 101);
    }

    #[test]
    fn zero_model_mse() {
        let m = ToyModel::zeros(&[2, 4, 1]).unwrap();
        let inputs = vec![0.0; 6];
        let targets = vec![1.0, -2.0, 0.5];
        assert_eq!(m.forward(&inputs, 3).unwrap(), vec![0.0; 3]);
        let l = m.loss(&inputs, &targets, 3, Loss::Mse).unwrap();
        assert!((l - (1.0 + 4.0 + 0.25) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn batch_shape_errors() {
        let m = ToyModel::init(&[2, 3, 1], 1).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 5], 3),
            Err(BenchError::BatchShape { .. })
        ));
        assert!(m.backward(&[0.0; 6], &[0.0; 2], 3, Loss::Mse).is_err());
        assert!(matches!(ToyModel::init(&[3], 0), Err(BenchError::TooFewLayers)));
    }

    #[test]
    fn datasets_are_seeded() {
        for task in [ToyTask::Regression, ToyTask::TwoMoons] {
            let a = task.dataset(64, 3);
            assert_eq!(a, task.dataset(64, 3));
            assert_ne!(a, task.dataset(64, 4));
            assert_eq!(a.inputs.len(), 64 * a.input_width);
        }
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let cfg = AdamConfig::default().with_learning_rate(0.0);
        for kind in [
            OptimizerKind::Adam,
            OptimizerKind::PiAdam { lambda: 2 },
            OptimizerKind::Sgd,
        ] {
            let run = train_toy(ToyTask::Regression, kind, cfg, 3, 5).unwrap();
            assert!(run.losses.windows(2).all(|w| w[0] == w[1]), "{kind:?}");
        }
    }

    #[test]
    fn csv_rows_have_schema_columns() {
        let run = run_descent(OptimizerKind::Sgd, AdamConfig::default(), (1.0, 1.0), 2).unwrap();
        let rows: Vec<_> = run.csv_rows(0).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.split(',').count() == 6));
    }
}
