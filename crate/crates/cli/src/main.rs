use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use piquant::bench::{run_descent, train_toy, DescentRun, ToyTask, TrainRun, DEFAULT_STARTS};
use piquant::format::{read_dense, read_quantized, write_atomic, write_dense, write_quantized};
use piquant::lab::{
    default_disk_coverage, empirical_error_stats, error_grid, log_error_slope, pibar_ablation,
    trajectory_samples, AblationRow, Distribution, ErrorStats, GridReport, TrajectoryPoint,
};
use piquant::optim::{AdamConfig, OptimizerKind};
use piquant::tensor::quantize_tensor_with_mode;
use piquant::{dequantize_tensor, pack_codes, FormatError, PackMode, PrecisionConfig};

mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "piquant", version, about = "Irrational-rotation quantization toolkit")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write the emitted artifact to this file instead of standard output.
    /// The file appears only once it is complete.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output encoding for tables and summaries.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PackArg {
    Byte,
    Group,
}

impl From<PackArg> for PackMode {
    fn from(p: PackArg) -> Self {
        match p {
            PackArg::Byte => PackMode::ByteAligned,
            PackArg::Group => PackMode::GroupPacked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Gaussian,
    Uniform,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => Distribution::Gaussian,
            DistArg::Uniform => Distribution::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
    #[value(name = "pi_adam", alias = "pi-adam")]
    PiAdam,
    #[value(name = "linear_adam", alias = "linear-adam")]
    LinearAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Regression,
    #[value(name = "two_moons", alias = "two-moons")]
    TwoMoons,
}

impl From<TaskArg> for ToyTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => ToyTask::Regression,
            TaskArg::TwoMoons => ToyTask::TwoMoons,
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct OptimizerArgs {
    /// Optimizer to run.
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,

    /// Decimal digit budget for pi_adam (1..=4).
    #[arg(long, default_value_t = 2)]
    lambda: u32,

    /// Code width for linear_adam (2..=16).
    #[arg(long, default_value_t = 8)]
    bits: u32,
}

impl OptimizerArgs {
    fn kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::PiAdam => OptimizerKind::PiAdam { lambda: self.lambda },
            OptimizerArg::LinearAdam => OptimizerKind::LinearAdam { bits: self.bits },
        }
    }

    fn lambda_column(&self) -> Option<u32> {
        (self.optimizer == OptimizerArg::PiAdam).then_some(self.lambda)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize a dense tensor file (.pqtd) into rotation codes (.piqt).
    ///
    /// Prints a JSON summary: schema "piquant.quantize/1" with elements,
    /// codes, lambda, pack, scale_w, bits_per_param and max_err_bound
    /// (the componentwise error bound in tensor units).
    Quantize {
        input: PathBuf,
        output: PathBuf,
        /// Decimal digit budget (1..=4); about 3.32 bits per digit per value.
        #[arg(long, default_value_t = 2)]
        lambda: u32,
        /// Payload layout: whole bytes per code, or radix groups.
        #[arg(long, value_enum, default_value_t = PackArg::Group)]
        pack: PackArg,
    },

    /// Restore a quantized tensor file (.piqt) into a dense tensor file (.pqtd).
    ///
    /// Prints a JSON summary: schema "piquant.dequantize/1" with elements,
    /// lambda and scale_w.
    Dequantize { input: PathBuf, output: PathBuf },

    /// Sampled roundtrip error statistics per digit budget.
    ///
    /// CSV columns: lambda,dist,n,mean_x,mean_y,max,bound,pass where errors are
    /// absolute, in scaled units, and bound = 2(1+pibar)10^-lambda/pi. JSON:
    /// schema "piquant.stats/1". Exits with status 3 if any mean exceeds
    /// slack x bound.
    Stats {
        /// Sample distribution on [-1, 1]^2 (gaussian is clipped).
        #[arg(long, value_enum, default_value_t = DistArg::Uniform)]
        dist: DistArg,
        /// Samples per digit budget.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Comma-separated digit budgets.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        lambda_list: Vec<u32>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Multiplier on the bound used for the pass/fail verdict.
        #[arg(long, default_value_t = 2.0)]
        slack: f64,
    },

    /// Per-cell mean error and code density over [-1, 1]^2.
    ///
    /// CSV columns: cell_x,cell_y,mean_err,density (mean L-infinity error in
    /// scaled units; density counts decoded codes per cell). JSON: schema
    /// "piquant.grid/1".
    Grid {
        #[arg(long, default_value_t = 2)]
        lambda: u32,
        /// Cells per side (>= 16).
        #[arg(long, default_value_t = 64)]
        res: usize,
    },

    /// Mean error of the standard coefficient against its truncated and
    /// integer-three variants, on gaussian and uniform samples.
    ///
    /// CSV columns: variant,coefficient,dist,lambda,n,mean_err. JSON: schema
    /// "piquant.ablation/1".
    Ablation {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        lambda: u32,
    },

    /// Samples of the continuous trajectory cos t + cos(pibar t), sin t + sin(pibar t).
    ///
    /// CSV columns: theta,x,y (theta in radians). JSON: schema
    /// "piquant.trajectory/1" with disk coverage over a 64x64 grid.
    Trajectory {
        /// Upper end of the angle range in radians [default: 2 pi 10^lambda].
        #[arg(long)]
        theta_max: Option<f64>,
        /// Number of evenly spaced samples, endpoints included.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        lambda: u32,
    },

    /// Minimize Himmelblau's function from one or more start points.
    ///
    /// CSV columns: step,x,y,f,optimizer,start_id. JSON: schema
    /// "piquant.himmelblau/1" with one summary per start.
    Himmelblau {
        #[command(flatten)]
        opt: OptimizerArgs,
        /// Start point "x,y"; repeatable [default: 0,0 0,-5 -4,4 4,-1].
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: Vec<(f64, f64)>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Step size.
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
    },

    /// Train a small tanh network on a generated task.
    ///
    /// CSV columns: epoch,loss,optimizer,lambda,seed (epoch 0 is the loss
    /// before training; lambda is empty for optimizers without a digit
    /// budget). JSON: schema "piquant.train_toy/1".
    TrainToy {
        #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
        task: TaskArg,
        #[command(flatten)]
        opt: OptimizerArgs,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Step size.
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected \"x,y\", got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|f| f.is_finite())
            .ok_or_else(|| format!("{v:?} is not a finite number"))
    };
    Ok((parse(x)?, parse(y)?))
}

fn precision(lambda: u32) -> Result<PrecisionConfig, CliError> {
    PrecisionConfig::new(lambda).map_err(|e| CliError::Usage(e.to_string()))
}

/// Fails early when the destination directory of `path` does not exist.
fn check_destination(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Io(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn at(path: &Path) -> impl Fn(FormatError) -> CliError + '_ {
    move |e| CliError::from(e).with_context(&path.display().to_string())
}

struct Sink {
    out: Option<PathBuf>,
    format: OutputFormat,
}

impl Sink {
    fn emit(&self, text: String) -> Result<(), CliError> {
        match &self.out {
            Some(path) => write_atomic(path, text.as_bytes()).map_err(at(path)),
            None => {
                let mut stdout = io::stdout().lock();
                stdout
                    .write_all(text.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|e| CliError::Io(format!("writing to standard output: {e}")))
            }
        }
    }

    fn json(&self, v: Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&v).expect("json values serialize");
        text.push('\n');
        self.emit(text)
    }

    fn csv(&self, header: &str, rows: impl Iterator<Item = String>) -> Result<(), CliError> {
        let mut text = String::from(header);
        text.push('\n');
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        self.emit(text)
    }
}

fn cmd_quantize(
    sink: &Sink,
    input: &Path,
    output: &Path,
    lambda: u32,
    pack: PackArg,
) -> Result<(), CliError> {
    let cfg = precision(lambda)?;
    check_destination(output)?;
    let t = read_dense(input).map_err(at(input))?;
    let q = quantize_tensor_with_mode(&t, &cfg, pack.into()).map_err(|e| CliError::Format(e.to_string()))?;
    write_quantized(output, &q).map_err(at(output))?;
    let packed = pack_codes(&q.codes, &cfg, q.pack_mode);
    sink.json(json!({
        "schema": "piquant.quantize/1",
        "elements": q.original_len,
        "codes": q.codes.len(),
        "lambda": lambda,
        "pack": match pack { PackArg::Byte => "byte", PackArg::Group => "group" },
        "scale_w": q.scale_w,
        "bits_per_param": packed.bits_per_param(q.original_len),
        "max_err_bound": cfg.err_max() * q.scale_w,
    }))
}

fn cmd_dequantize(sink: &Sink, input: &Path, output: &Path) -> Result<(), CliError> {
    check_destination(output)?;
    let q = read_quantized(input).map_err(at(input))?;
    let t = dequantize_tensor(&q).map_err(at(input))?;
    write_dense(output, &t).map_err(at(output))?;
    sink.json(json!({
        "schema": "piquant.dequantize/1",
        "elements": t.len(),
        "lambda": q.lambda,
        "scale_w": q.scale_w,
    }))
}

fn cmd_stats(
    sink: &Sink,
    dist: Distribution,
    n: usize,
    lambdas: &[u32],
    seed: u64,
    slack: f64,
) -> Result<(), CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Usage("--lambda-list needs at least one value".into()));
    }
    if !(slack.is_finite() && slack > 0.0) {
        return Err(CliError::Usage(format!("--slack {slack} must be positive")));
    }
    let cfgs = lambdas
        .iter()
        .map(|&l| precision(l))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = cfgs
        .iter()
        .map(|c| empirical_error_stats(dist, n, c, seed))
        .collect::<Result<Vec<ErrorStats>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let passes: Vec<bool> = stats.iter().map(|s| s.within_bound(slack)).collect();

    match sink.format {
        OutputFormat::Csv => sink.csv(
            &format!("{},pass", ErrorStats::CSV_HEADER),
            stats
                .iter()
                .zip(&passes)
                .map(|(s, p)| format!("{},{p}", s.csv_row())),
        )?,
        OutputFormat::Json => {
            let rows: Vec<Value> = stats
                .iter()
                .zip(&passes)
                .map(|(s, p)| {
                    let mut v = serde_json::to_value(s).expect("stats serialize");
                    v["pass"] = json!(p);
                    v
                })
                .collect();
            let slope = (stats.len() >= 2).then(|| log_error_slope(&stats));
            sink.json(json!({
                "schema": "piquant.stats/1",
                "distribution": dist.to_string(),
                "n": n,
                "seed": seed,
                "slack": slack,
                "rows": rows,
                "log_error_slope": slope,
                "pass": passes.iter().all(|&p| p),
            }))?
        }
    }

    let failed: Vec<String> = stats
        .iter()
        .zip(&passes)
        .filter(|(_, &p)| !p)
        .map(|(s, _)| s.lambda.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Bound(format!(
            "mean error above {slack} x bound for lambda {}",
            failed.join(",")
        )))
    }
}

fn cmd_grid(sink: &Sink, lambda: u32, res: usize) -> Result<(), CliError> {
    let cfg = precision(lambda)?;
    let g: GridReport = error_grid(&cfg, res).map_err(|e| CliError::Usage(e.to_string()))?;
    match sink.format {
        OutputFormat::Csv => sink.csv(GridReport::CSV_HEADER, g.csv_rows()),
        OutputFormat::Json => {
            let mut v = serde_json::to_value(&g).expect("grid serializes");
            v["schema"] = json!("piquant.grid/1");
            sink.json(v)
        }
    }
}

fn cmd_ablation(sink: &Sink, n: usize, seed: u64, lambda: u32) -> Result<(), CliError> {
    precision(lambda)?;
    let rows = pibar_ablation(n, seed, lambda).map_err(|e| CliError::Usage(e.to_string()))?;
    match sink.format {
        OutputFormat::Csv => sink.csv(
            AblationRow::CSV_HEADER,
            rows.iter().map(|r| {
                format!(
                    "{},{:e},{},{lambda},{n},{:e}",
                    r.variant.name(),
                    r.coefficient,
                    r.distribution,
                    r.mean_error
                )
            }),
        ),
        OutputFormat::Json => sink.json(json!({
            "schema": "piquant.ablation/1",
            "lambda": lambda,
            "n": n,
            "seed": seed,
            "rows": rows.iter().map(|r| json!({
                "variant": r.variant.name(),
                "coefficient": r.coefficient,
                "distribution": r.distribution.to_string(),
                "mean_error": r.mean_error,
            })).collect::<Vec<_>>(),
        })),
    }
}

fn cmd_trajectory(sink: &Sink, theta_max: Option<f64>, n: usize, lambda: u32) -> Result<(), CliError> {
    let cfg = precision(lambda)?;
    let theta_max = theta_max.unwrap_or(std::f64::consts::TAU * cfg.digit_modulus() as f64);
    let samples = trajectory_samples(theta_max, n, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    match sink.format {
        OutputFormat::Csv => sink.csv(
            TrajectoryPoint::CSV_HEADER,
            samples
                .iter()
                .map(|s| format!("{:e},{:e},{:e}", s.theta, s.x, s.y)),
        ),
        OutputFormat::Json => {
            let cov = default_disk_coverage(&samples);
            sink.json(json!({
                "schema": "piquant.trajectory/1",
                "lambda": lambda,
                "theta_max": theta_max,
                "n": n,
                "coverage": { "cells_in_disk": cov.cells_in_disk, "visited": cov.visited, "fraction": cov.fraction() },
                "points": samples.iter().map(|s| [s.theta, s.x, s.y]).collect::<Vec<_>>(),
            }))
        }
    }
}

fn adam_config(lr: f64) -> Result<AdamConfig, CliError> {
    let cfg = AdamConfig::default().with_learning_rate(lr);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_himmelblau(
    sink: &Sink,
    opt: OptimizerArgs,
    starts: &[(f64, f64)],
    steps: usize,
    lr: f64,
) -> Result<(), CliError> {
    let cfg = adam_config(lr)?;
    let kind = opt.kind();
    let starts = if starts.is_empty() {
        &DEFAULT_STARTS[..]
    } else {
        starts
    };
    let runs = starts
        .par_iter()
        .map(|&s| run_descent(kind, cfg, s, steps))
        .collect::<Result<Vec<DescentRun>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match sink.format {
        OutputFormat::Csv => sink.csv(
            DescentRun::CSV_HEADER,
            runs.iter().enumerate().flat_map(|(i, r)| r.csv_rows(i)),
        ),
        OutputFormat::Json => sink.json(json!({
            "schema": "piquant.himmelblau/1",
            "optimizer": kind.label(),
            "learning_rate": lr,
            "steps": steps,
            "runs": runs.iter().enumerate().map(|(i, r)| json!({
                "start_id": i,
                "start": [r.start.0, r.start.1],
                "final": r.trajectory.last().map(|t| [t.0, t.1]),
                "final_f": r.final_f,
                "steps_taken": r.trajectory.len() - 1,
                "diverged": r.diverged,
            })).collect::<Vec<_>>(),
        })),
    }
}

fn cmd_train_toy(
    sink: &Sink,
    task: ToyTask,
    opt: OptimizerArgs,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> Result<(), CliError> {
    let cfg = adam_config(lr)?;
    let run: TrainRun =
        train_toy(task, opt.kind(), cfg, epochs, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    match sink.format {
        OutputFormat::Csv => sink.csv(TrainRun::CSV_HEADER, run.csv_rows(opt.lambda_column())),
        OutputFormat::Json => sink.json(json!({
            "schema": "piquant.train_toy/1",
            "task": task.to_string(),
            "optimizer": run.optimizer,
            "lambda": opt.lambda_column(),
            "seed": seed,
            "learning_rate": lr,
            "losses": run.losses,
            "final_loss": run.final_loss(),
            "diverged": run.diverged,
        })),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(out) = &cli.out {
        check_destination(out)?;
    }
    let sink = Sink {
        out: cli.out.clone(),
        format: cli.format,
    };
    match cli.command {
        Command::Quantize {
            input,
            output,
            lambda,
            pack,
        } => cmd_quantize(&sink, &input, &output, lambda, pack),
        Command::Dequantize { input, output } => cmd_dequantize(&sink, &input, &output),
        Command::Stats {
            dist,
            n,
            lambda_list,
            seed,
            slack,
        } => cmd_stats(&sink, dist.into(), n, &lambda_list, seed, slack),
        Command::Grid { lambda, res } => cmd_grid(&sink, lambda, res),
        Command::Ablation { n, seed, lambda } => cmd_ablation(&sink, n, seed, lambda),
        Command::Trajectory { theta_max, n, lambda } => cmd_trajectory(&sink, theta_max, n, lambda),
        Command::Himmelblau {
            opt,
            start,
            steps,
            lr,
        } => cmd_himmelblau(&sink, opt, &start, steps, lr),
        Command::TrainToy {
            task,
            opt,
            epochs,
            seed,
            lr,
        } => cmd_train_toy(&sink, task.into(), opt, epochs, seed, lr),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("piquant: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
