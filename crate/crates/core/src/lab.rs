//! Empirical error analysis of the rotation codec: sampled error statistics,
//! an exhaustive nearest-code oracle, error/density grids, coefficient
//! ablations and sampling of the continuous rotation trajectory.

use std::f64::consts::{SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    build_pibar, decode_code, encode_pair, rotation_angles, solve_geometry, PlanarPoint, PrecisionConfig,
    RotationCode,
};
use crate::error::CodecError;

/// Largest λ the brute-force oracle accepts (10^4 codes).
pub const ORACLE_MAX_LAMBDA: u32 = 2;

/// Upper bound on decoded codes used for a density layer.
pub const DENSITY_SAMPLE_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("brute-force oracle refuses lambda={0}; it enumerates 10^(2*lambda) codes and is capped at 2")]
    OracleTooLarge(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Standard normal per coordinate, clipped to `[-1, 1]`.
    Gaussian,
    /// Uniform on `(-1, 1)^2`.
    Uniform,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Uniform => "uniform",
        })
    }
}

impl FromStr for Distribution {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "uniform" => Ok(Distribution::Uniform),
            other => Err(LabError::InvalidArgument(format!(
                "unknown distribution {other:?}"
            ))),
        }
    }
}

/// Draws `n` scaled points; a pure function of `(dist, n, seed)`.
pub fn sample_points(dist: Distribution, n: usize, seed: u64) -> Vec<PlanarPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        Distribution::Gaussian => (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                PlanarPoint::new(x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0))
            })
            .collect(),
        Distribution::Uniform => {
            let u = Uniform::new(-1.0, 1.0).expect("non-empty range");
            (0..n)
                .map(|_| PlanarPoint::new(rng.sample(u), rng.sample(u)))
                .collect()
        }
    }
}

/// Pairwise summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

/// Componentwise absolute roundtrip errors for every point.
pub fn roundtrip_errors(
    points: &[PlanarPoint],
    cfg: &PrecisionConfig,
) -> Result<Vec<(f64, f64)>, CodecError> {
    points
        .par_iter()
        .with_min_len(1024)
        .map(|&p| {
            let q = decode_code(encode_pair(p, cfg)?, cfg)?;
            Ok(((q.x - p.x).abs(), (q.y - p.y).abs()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub lambda: u32,
    pub distribution: Distribution,
    pub sample_count: usize,
    pub mean_abs_err_x: f64,
    pub mean_abs_err_y: f64,
    pub max_abs_err: f64,
    /// `2(1 + π̄)·10^{-λ}/π`.
    pub mean_error_bound: f64,
}

impl ErrorStats {
    pub fn mean_abs_err(&self) -> f64 {
        0.5 * (self.mean_abs_err_x + self.mean_abs_err_y)
    }

    /// Both componentwise means within `slack` times the average-error scale.
    pub fn within_bound(&self, slack: f64) -> bool {
        let limit = slack * self.mean_error_bound;
        self.mean_abs_err_x <= limit && self.mean_abs_err_y <= limit
    }

    pub const CSV_HEADER: &'static str = "lambda,dist,n,mean_x,mean_y,max,bound";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e}",
            self.lambda,
            self.distribution,
            self.sample_count,
            self.mean_abs_err_x,
            self.mean_abs_err_y,
            self.max_abs_err,
            self.mean_error_bound
        )
    }
}

pub fn stats_from_points(
    dist: Distribution,
    points: &[PlanarPoint],
    cfg: &PrecisionConfig,
) -> Result<ErrorStats, CodecError> {
    let errs = roundtrip_errors(points, cfg)?;
    let xs: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.1).collect();
    let max = errs.iter().fold(0.0f64, |acc, e| acc.max(e.0).max(e.1));
    Ok(ErrorStats {
        lambda: cfg.lambda(),
        distribution: dist,
        sample_count: points.len(),
        mean_abs_err_x: mean(&xs),
        mean_abs_err_y: mean(&ys),
        max_abs_err: max,
        mean_error_bound: cfg.mean_error_scale(),
    })
}

pub fn empirical_error_stats(
    dist: Distribution,
    n: usize,
    cfg: &PrecisionConfig,
    seed: u64,
) -> Result<ErrorStats, LabError> {
    if n == 0 {
        return Err(LabError::InvalidArgument("sample count must be >= 1".into()));
    }
    Ok(stats_from_points(dist, &sample_points(dist, n, seed), cfg)?)
}

/// Least-squares slope of `log10(mean error)` against λ.
pub fn log_error_slope(stats: &[ErrorStats]) -> f64 {
    let pts: Vec<(f64, f64)> = stats
        .iter()
        .map(|s| (s.lambda as f64, s.mean_abs_err().log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Every decoded code for a small λ, for exhaustive nearest-code search.
#[derive(Debug, Clone)]
pub struct CodeTable {
    cfg: PrecisionConfig,
    points: Vec<PlanarPoint>,
}

impl CodeTable {
    pub fn new(cfg: &PrecisionConfig) -> Result<Self, LabError> {
        if cfg.lambda() > ORACLE_MAX_LAMBDA {
            return Err(LabError::OracleTooLarge(cfg.lambda()));
        }
        let points = (0..cfg.code_modulus())
            .map(|c| decode_code(RotationCode::from_raw(c), cfg))
            .collect::<Result<_, _>>()?;
        Ok(Self { cfg: *cfg, points })
    }

    /// Code whose decoded point is closest to `p` in Euclidean distance,
    /// with that distance. Ties go to the smallest code.
    pub fn nearest(&self, p: PlanarPoint) -> (RotationCode, f64) {
        let (idx, d2) = self
            .points
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |best, (i, q)| {
                let d2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
                if d2 < best.1 {
                    (i, d2)
                } else {
                    best
                }
            });
        (RotationCode::from_raw(idx as u64), d2.sqrt())
    }

    pub fn points(&self) -> &[PlanarPoint] {
        &self.points
    }

    pub fn config(&self) -> &PrecisionConfig {
        &self.cfg
    }
}

/// Exhaustive search for the best representable point; `λ <= 2` only.
pub fn oracle_nearest_code(p: PlanarPoint, cfg: &PrecisionConfig) -> Result<(RotationCode, f64), LabError> {
    Ok(CodeTable::new(cfg)?.nearest(p))
}

/// Signed distance `a - b` wrapped into `[-π, π)`, returned as a magnitude.
fn wrapped_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// How far each of the two unit rotations used by the code sits from the
/// exact rotations that reproduce the point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularDeviation {
    /// `|θ_used - (α - β)|` modulo 2π.
    pub first: f64,
    /// `|π̄θ_used - (α + β)|` modulo 2π.
    pub second: f64,
}

impl AngularDeviation {
    pub fn total(&self) -> f64 {
        self.first + self.second
    }
}

pub fn angular_deviation(p: PlanarPoint, cfg: &PrecisionConfig) -> Result<AngularDeviation, CodecError> {
    let s = solve_geometry(p, cfg)?;
    let (first, second) = rotation_angles(s.code(cfg), cfg);
    Ok(AngularDeviation {
        first: wrapped_gap(first, s.delta),
        second: wrapped_gap(second, s.alpha + s.beta),
    })
}

/// Maximum L∞ roundtrip error over a regular `resolution x resolution`
/// lattice of `[-1, 1]^2` (corners included).
pub fn max_error_sweep(cfg: &PrecisionConfig, resolution: usize) -> Result<f64, CodecError> {
    let step = 2.0 / (resolution - 1) as f64;
    (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let p = PlanarPoint::new(
                -1.0 + (k % resolution) as f64 * step,
                -1.0 + (k / resolution) as f64 * step,
            );
            crate::codec::roundtrip_error(p, cfg)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Per-cell error and code density over `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub lambda: u32,
    pub resolution: usize,
    /// Row-major, `cell_y * resolution + cell_x`; mean L∞ roundtrip error.
    pub mean_err: Vec<f64>,
    /// Row-major count of decoded code locations per cell.
    pub density: Vec<u64>,
    /// Every `code_stride`-th code was decoded for the density layer.
    pub code_stride: u64,
    /// Sampled codes whose decoded point fell inside the domain.
    pub codes_in_domain: u64,
}

impl GridReport {
    pub const CSV_HEADER: &'static str = "cell_x,cell_y,mean_err,density";

    pub fn cell_err(&self, cx: usize, cy: usize) -> f64 {
        self.mean_err[cy * self.resolution + cx]
    }

    pub fn cell_density(&self, cx: usize, cy: usize) -> u64 {
        self.density[cy * self.resolution + cx]
    }

    /// Centre of cell `(cx, cy)` in domain coordinates.
    pub fn cell_center(&self, cx: usize, cy: usize) -> PlanarPoint {
        let w = 2.0 / self.resolution as f64;
        PlanarPoint::new(-1.0 + (cx as f64 + 0.5) * w, -1.0 + (cy as f64 + 0.5) * w)
    }

    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.resolution * self.resolution).map(move |k| {
            let (cx, cy) = (k % self.resolution, k / self.resolution);
            format!("{cx},{cy},{:e},{}", self.mean_err[k], self.density[k])
        })
    }
}

/// Points per cell side used to estimate each cell's mean error.
const GRID_SUBSAMPLES: usize = 4;

pub fn error_grid(cfg: &PrecisionConfig, resolution: usize) -> Result<GridReport, LabError> {
    if resolution < 16 {
        return Err(LabError::InvalidArgument(format!(
            "grid resolution {resolution} must be >= 16"
        )));
    }
    let cell = 2.0 / resolution as f64;
    let sub = cell / GRID_SUBSAMPLES as f64;
    let mean_err = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (cx, cy) = (k % resolution, k / resolution);
            let errs = (0..GRID_SUBSAMPLES * GRID_SUBSAMPLES)
                .map(|s| {
                    let (sx, sy) = (s % GRID_SUBSAMPLES, s / GRID_SUBSAMPLES);
                    let p = PlanarPoint::new(
                        -1.0 + cx as f64 * cell + (sx as f64 + 0.5) * sub,
                        -1.0 + cy as f64 * cell + (sy as f64 + 0.5) * sub,
                    );
                    crate::codec::roundtrip_error(p, cfg)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(mean(&errs))
        })
        .collect::<Result<Vec<_>, CodecError>>()?;

    let code_stride = (cfg.code_modulus() / DENSITY_SAMPLE_BUDGET).max(1);
    let mut density = vec![0u64; resolution * resolution];
    let mut codes_in_domain = 0;
    for c in (0..cfg.code_modulus()).step_by(code_stride as usize) {
        let p = decode_code(RotationCode::from_raw(c), cfg)?;
        if let Some(k) = cell_index(p, resolution) {
            density[k] += 1;
            codes_in_domain += 1;
        }
    }

    Ok(GridReport {
        lambda: cfg.lambda(),
        resolution,
        mean_err,
        density,
        code_stride,
        codes_in_domain,
    })
}

/// Cell of `[-1, 1]^2` containing `p`; the upper edges belong to the last cell.
fn cell_index(p: PlanarPoint, resolution: usize) -> Option<usize> {
    if !(-1.0..=1.0).contains(&p.x) || !(-1.0..=1.0).contains(&p.y) {
        return None;
    }
    let to_cell = |v: f64| (((v + 1.0) / 2.0 * resolution as f64) as usize).min(resolution - 1);
    Some(to_cell(p.y) * resolution + to_cell(p.x))
}

/// Coefficient variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientVariant {
    /// `10^{-λ} + 10^{-2λ}·frac(π·10^8)`.
    Standard,
    /// Only the leading `10^{-λ}` term, a rational coefficient.
    Truncated,
    /// Standard coefficient with integer part 3.
    IntegerThree,
}

impl CoefficientVariant {
    pub const ALL: [CoefficientVariant; 3] = [
        CoefficientVariant::Standard,
        CoefficientVariant::Truncated,
        CoefficientVariant::IntegerThree,
    ];

    pub fn coefficient(self, lambda: u32) -> Result<f64, CodecError> {
        let pibar = build_pibar(lambda)?;
        Ok(match self {
            CoefficientVariant::Standard => pibar,
            CoefficientVariant::Truncated => 10f64.powi(-(lambda as i32)),
            CoefficientVariant::IntegerThree => 3.0 + pibar,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CoefficientVariant::Standard => "pibar",
            CoefficientVariant::Truncated => "pibar1_truncated",
            CoefficientVariant::IntegerThree => "pibar2_integer3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: CoefficientVariant,
    pub coefficient: f64,
    pub distribution: Distribution,
    pub mean_error: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "variant,coefficient,dist,lambda,n,mean_err";
}

/// Mean componentwise error for every coefficient variant on both
/// distributions, using the same sample set per distribution.
pub fn pibar_ablation(n: usize, seed: u64, lambda: u32) -> Result<Vec<AblationRow>, LabError> {
    if n == 0 {
        return Err(LabError::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for dist in [Distribution::Gaussian, Distribution::Uniform] {
        let points = sample_points(dist, n, seed);
        for variant in CoefficientVariant::ALL {
            let coefficient = variant.coefficient(lambda)?;
            let cfg = PrecisionConfig::with_coefficient(lambda, coefficient)?;
            let stats = stats_from_points(dist, &points, &cfg)?;
            rows.push(AblationRow {
                variant,
                coefficient,
                distribution: dist,
                mean_error: stats.mean_abs_err(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

impl TrajectoryPoint {
    pub const CSV_HEADER: &'static str = "theta,x,y";
}

/// `n` uniform samples of `cos θ + cos π̄θ, sin θ + sin π̄θ` over `[0, theta_max]`.
pub fn trajectory_samples(
    theta_max: f64,
    n: usize,
    cfg: &PrecisionConfig,
) -> Result<Vec<TrajectoryPoint>, LabError> {
    if n < 2 {
        return Err(LabError::InvalidArgument(
            "trajectory needs at least 2 samples".into(),
        ));
    }
    if !theta_max.is_finite() || theta_max < 0.0 {
        return Err(LabError::InvalidArgument(format!(
            "theta_max {theta_max} must be finite and >= 0"
        )));
    }
    let pibar = cfg.pibar();
    Ok((0..n)
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            let theta = theta_max * i as f64 / (n - 1) as f64;
            let (s1, c1) = theta.sin_cos();
            let (s2, c2) = (pibar * theta).sin_cos();
            TrajectoryPoint {
                theta,
                x: c1 + c2,
                y: s1 + s2,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub cells_in_disk: usize,
    pub visited: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        self.visited as f64 / self.cells_in_disk as f64
    }
}

/// Fraction of the cells of a `resolution x resolution` grid over
/// `[-radius, radius]^2` whose centre lies in the disk of that radius and
/// which contain at least one sample.
pub fn disk_coverage(samples: &[TrajectoryPoint], resolution: usize, radius: f64) -> Coverage {
    let w = 2.0 * radius / resolution as f64;
    let mut visited = vec![false; resolution * resolution];
    for s in samples {
        if s.x.abs() >= radius || s.y.abs() >= radius {
            continue;
        }
        let cx = (((s.x + radius) / w) as usize).min(resolution - 1);
        let cy = (((s.y + radius) / w) as usize).min(resolution - 1);
        visited[cy * resolution + cx] = true;
    }
    let mut cells_in_disk = 0;
    let mut hit = 0;
    for cy in 0..resolution {
        for cx in 0..resolution {
            let x = -radius + (cx as f64 + 0.5) * w;
            let y = -radius + (cy as f64 + 0.5) * w;
            if x.hypot(y) <= radius {
                cells_in_disk += 1;
                hit += visited[cy * resolution + cx] as usize;
            }
        }
    }
    Coverage {
        cells_in_disk,
        visited: hit,
    }
}

/// Coverage of the disk of radius √2 (the image of `[-1, 1]^2` corners).
pub fn default_disk_coverage(samples: &[TrajectoryPoint]) -> Coverage {
    disk_coverage(samples, 64, SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: u32) -> PrecisionConfig {
        PrecisionConfig::new(lambda).unwrap()
    }

    #[test]
    fn sampling_is_seeded_and_in_domain() {
        for dist in [Distribution::Gaussian, Distribution::Uniform] {
            let a = sample_points(dist, 500, 9);
            assert_eq!(a, sample_points(dist, 500, 9));
            assert_ne!(a, sample_points(dist, 500, 10));
            assert!(a.iter().all(|p| p.x.abs() <= 1.0 && p.y.abs() <= 1.0));
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(mean(&[]), 0.0);
    }

    #[test]
    fn oracle_trivial_cases() {
        let c = cfg(1);
        let (code, err) = oracle_nearest_code(PlanarPoint::new(2.0, 0.0), &c).unwrap();
        assert_eq!(code.value(), 0);
        assert_eq!(err, 0.0);
        let target = decode_code(RotationCode::from_raw(57), &c).unwrap();
        let (_, err) = oracle_nearest_code(target, &c).unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(
            oracle_nearest_code(PlanarPoint::ORIGIN, &cfg(3)).unwrap_err(),
            LabError::OracleTooLarge(3)
        );
    }

    #[test]
    fn stats_invariants() {
        let s = empirical_error_stats(Distribution::Uniform, 2000, &cfg(2), 1).unwrap();
        assert!(s.mean_abs_err_x >= 0.0 && s.mean_abs_err_y >= 0.0);
        assert!(s.mean_abs_err_x <= s.max_abs_err && s.mean_abs_err_y <= s.max_abs_err);
        assert_eq!(s.sample_count, 2000);
        assert!(empirical_error_stats(Distribution::Uniform, 0, &cfg(2), 1).is_err());
        assert_eq!(s.csv_row().split(',').count(), 7);
    }

    #[test]
    fn grid_density_is_conserved() {
        let g = error_grid(&cfg(2), 16).unwrap();
        assert_eq!(g.density.iter().sum::<u64>(), g.codes_in_domain);
        let inside = (0..10_000u64)
            .filter(|&c| {
                let p = decode_code(RotationCode::from_raw(c), &cfg(2)).unwrap();
                p.x.abs() <= 1.0 && p.y.abs() <= 1.0
            })
            .count() as u64;
        assert_eq!(g.codes_in_domain, inside);
        assert_eq!(g.code_stride, 1);
        assert!(error_grid(&cfg(2), 15).is_err());
    }

    #[test]
    fn trajectory_basics() {
        let c = cfg(2);
        let t = trajectory_samples(100.0, 1000, &c).unwrap();
        assert_eq!(
            t[0],
            TrajectoryPoint {
                theta: 0.0,
                x: 2.0,
                y: 0.0
            }
        );
        assert_eq!(t.last().unwrap().theta, 100.0);
        assert!(t.iter().all(|p| p.x * p.x + p.y * p.y <= 4.0 + 1e-12));
        assert!(trajectory_samples(1.0, 1, &c).is_err());
    }

    #[test]
    fn variant_coefficients() {
        assert_eq!(CoefficientVariant::Truncated.coefficient(3).unwrap(), 0.001);
        let v = CoefficientVariant::IntegerThree.coefficient(3).unwrap();
        assert!((v - 3.001_000_358_979_2).abs() < 1e-12);
    }

    #[test]
    fn distribution_parsing() {
        assert_eq!(
            "gaussian".parse::<Distribution>().unwrap(),
            Distribution::Gaussian
        );
        assert_eq!("uniform".parse::<Distribution>().unwrap(), Distribution::Uniform);
        assert!("cauchy".parse::<Distribution>().is_err());
    }
}
