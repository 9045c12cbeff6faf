//! End-to-end acceptance checks. Runs every criterion in sequence, prints one
//! line per criterion and exits non-zero if any of them fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use piquant::bench::{himmelblau, himmelblau_grad, run_descent, train_toy, Loss, ToyModel, ToyTask};
use piquant::lab::{
    default_disk_coverage, empirical_error_stats, log_error_slope, mean, pibar_ablation, roundtrip_errors,
    sample_points, trajectory_samples, CodeTable, CoefficientVariant, Distribution,
};
use piquant::optim::{
    adam_step, quantized_adam_step, AdamConfig, AdamState, IdentityCodec, OptimizerKind, QuantizedAdamState,
};
use piquant::{
    decode_code, encode_pair, m_from_omega, pack_codes, solve_geometry, solve_m_residual, unpack_codes,
    DenseTensor, PackMode, PrecisionConfig, RotationCode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn cfg(lambda: u32) -> PrecisionConfig {
    PrecisionConfig::new(lambda).unwrap()
}

fn digit_extraction() -> Outcome {
    let c = cfg(4);
    let frac_omega = 0.97525751858;
    let m = m_from_omega(frac_omega, &c);
    let r = solve_m_residual(m, frac_omega, &c);
    let ok = m == 9752 && (r - 0.000022510916).abs() <= 1e-9;
    outcome(ok, format!("m={m} residual={r:.12}"))
}

fn mean_error_bound() -> Outcome {
    let stats: Vec<_> = (1..=4)
        .map(|l| empirical_error_stats(Distribution::Uniform, 100_000, &cfg(l), 42).unwrap())
        .collect();
    let slope = log_error_slope(&stats);
    let ratios: Vec<String> = stats
        .iter()
        .map(|s| {
            format!(
                "{:.3}",
                s.mean_abs_err_x.max(s.mean_abs_err_y) / s.mean_error_bound
            )
        })
        .collect();
    let ok = stats.iter().all(|s| s.within_bound(2.0)) && (slope + 1.0).abs() <= 0.1;
    outcome(
        ok,
        format!(
            "mean/bound per lambda=[{}] (limit 2.0), slope={slope:.4}",
            ratios.join(", ")
        ),
    )
}

fn m_residual_guarantee() -> Outcome {
    let mut worst = Vec::new();
    let mut ok = true;
    for lambda in 1..=4 {
        let c = cfg(lambda);
        let limit = 10f64.powi(-(lambda as i32));
        let max = sample_points(Distribution::Uniform, 100_000, 100 + lambda as u64)
            .iter()
            .map(|&p| {
                let s = solve_geometry(p, &c).unwrap();
                solve_m_residual(s.m, s.omega, &c)
            })
            .fold(0.0f64, f64::max);
        ok &= max < limit;
        worst.push(format!("{:.3}", max / limit));
    }
    outcome(ok, format!("max residual / 10^-lambda = [{}]", worst.join(", ")))
}

fn oracle_consistency() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for lambda in [1, 2] {
        let c = cfg(lambda);
        let table = CodeTable::new(&c).unwrap();
        let slack = 2.0 * c.angle_unit() * (1.0 + c.pibar());
        let mut worst_gap = f64::NEG_INFINITY;
        for p in sample_points(Distribution::Uniform, 1000, 200 + lambda as u64) {
            let q = decode_code(encode_pair(p, &c).unwrap(), &c).unwrap();
            let (_, best) = table.nearest(p);
            worst_gap = worst_gap.max(q.distance(&p) - best);
        }
        ok &= worst_gap <= slack;
        detail.push(format!("lambda={lambda} worst gap {worst_gap:.4} <= {slack:.4}"));
    }
    outcome(ok, detail.join("; "))
}

fn non_uniformity() -> Outcome {
    let c = cfg(2);
    let points = sample_points(Distribution::Uniform, 100_000, 300);
    let errs = roundtrip_errors(&points, &c).unwrap();
    let (mut inner, mut outer) = (Vec::new(), Vec::new());
    for (p, e) in points.iter().zip(&errs) {
        let avg = 0.5 * (e.0 + e.1);
        match p.radius() {
            r if r < 0.3 => inner.push(avg),
            r if r > 1.2 => outer.push(avg),
            _ => {}
        }
    }
    let (i, o) = (mean(&inner), mean(&outer));
    outcome(i < o, format!("r<0.3 mean {i:.5}, r>1.2 mean {o:.5}"))
}

fn ablation_ordering() -> Outcome {
    let rows = pibar_ablation(100_000, 42, 3).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for dist in [Distribution::Gaussian, Distribution::Uniform] {
        let err = |v| {
            rows.iter()
                .find(|r| r.variant == v && r.distribution == dist)
                .unwrap()
                .mean_error
        };
        let (s, t, i) = (
            err(CoefficientVariant::Standard),
            err(CoefficientVariant::Truncated),
            err(CoefficientVariant::IntegerThree),
        );
        ok &= s <= t && s <= i;
        detail.push(format!("{dist}: {s:.6} / {t:.6} / {i:.6}"));
    }
    outcome(
        ok,
        format!("lambda=3 standard/truncated/integer-three {}", detail.join("; ")),
    )
}

fn packing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut ok = true;
    for lambda in 1..=4 {
        let c = cfg(lambda);
        let codes: Vec<RotationCode> = (0..10_000)
            .map(|_| RotationCode::from_raw(rng.random_range(0..c.code_modulus())))
            .collect();
        for mode in [PackMode::ByteAligned, PackMode::GroupPacked] {
            ok &= unpack_codes(&pack_codes(&codes, &c, mode), &c).unwrap() == codes;
        }
    }
    let c = cfg(1);
    let codes = vec![RotationCode::from_raw(99); 10_000];
    let bpp = pack_codes(&codes, &c, PackMode::GroupPacked).bits_per_param(2 * codes.len());
    ok &= bpp <= 3.40;
    outcome(
        ok,
        format!("roundtrips exact, lambda=1 group-packed {bpp:.4} bits/param"),
    )
}

fn identity_codec_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut normal = |n: usize, s: f64| {
        DenseTensor::from_vec((0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    };
    let cfg = AdamConfig::default().with_learning_rate(0.01);
    let start = normal(1000, 1.0);
    let (mut a, mut b) = (start.clone(), start);
    let mut plain = AdamState::new(a.shape());
    let mut wrapped = QuantizedAdamState::new(&IdentityCodec, b.shape()).unwrap();
    for _ in 0..100 {
        let g = normal(1000, 2.0);
        adam_step(&mut a, &g, &mut plain, &cfg).unwrap();
        quantized_adam_step(&mut b, &g, &mut wrapped, &IdentityCodec, &cfg).unwrap();
    }
    let same = a
        .values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(same, "100 steps on 1000 parameters".into())
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let h = 1e-5;
    let mut himmel_ok = true;
    for _ in 0..100 {
        let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (gx, gy) = himmelblau_grad(x, y);
        let fx = (himmelblau(x + h, y) - himmelblau(x - h, y)) / (2.0 * h);
        let fy = (himmelblau(x, y + h) - himmelblau(x, y - h)) / (2.0 * h);
        himmel_ok &= rel_close(gx, fx, 1e-6) && rel_close(gy, fy, 1e-6);
    }

    let mut model = ToyModel::init(&[2, 8, 1], 601).unwrap();
    for b in &mut model.biases {
        b.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let rows = 16;
    let inputs: Vec<f64> = (0..2 * rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = model.backward(&inputs, &targets, rows, Loss::Mse).unwrap();
    let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.values().to_vec()).collect();
    let mut mlp_ok = true;
    let mut k = 0;
    let lens: Vec<usize> = grads.tensors().map(DenseTensor::len).collect();
    for (p, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let bump = |d: f64| {
                let mut m = model.clone();
                m.parameters_mut().nth(p).unwrap().values_mut()[i] += d;
                m.loss(&inputs, &targets, rows, Loss::Mse).unwrap()
            };
            mlp_ok &= rel_close(analytic[k], (bump(h) - bump(-h)) / (2.0 * h), 1e-4);
            k += 1;
        }
    }
    outcome(
        himmel_ok && mlp_ok,
        format!("himmelblau {himmel_ok}, mlp 2-8-1 ({k} parameters) {mlp_ok}"),
    )
}

fn himmelblau_descent() -> Outcome {
    let cfg = AdamConfig::default().with_learning_rate(0.01);
    let adam = run_descent(OptimizerKind::Adam, cfg, (0.0, 0.0), 2000).unwrap();
    let pi = run_descent(OptimizerKind::PiAdam { lambda: 2 }, cfg, (0.0, 0.0), 2000).unwrap();
    let ok = adam.final_f > 1e-3 || pi.final_f <= 1e-3;
    outcome(
        ok,
        format!("adam f={:.3e}, pi_adam2 f={:.3e}", adam.final_f, pi.final_f),
    )
}

fn toy_parity() -> Outcome {
    let cfg = AdamConfig::default();
    let seeds = [42u64, 43, 44];
    let avg = |kind| {
        seeds
            .iter()
            .map(|&s| {
                train_toy(ToyTask::Regression, kind, cfg, 200, s)
                    .unwrap()
                    .final_loss()
            })
            .sum::<f64>()
            / seeds.len() as f64
    };
    let full = avg(OptimizerKind::Adam);
    let rel = |lambda| (avg(OptimizerKind::PiAdam { lambda }) - full).abs() / full;
    let (r2, r1) = (rel(2), rel(1));
    outcome(
        r2 <= 0.10 && r1 <= 0.20,
        format!("adam loss {full:.5}; relative gap lambda=2 {r2:.3} (<= 0.10), lambda=1 {r1:.3} (<= 0.20)"),
    )
}

fn trajectory_coverage() -> Outcome {
    let samples = trajectory_samples(TAU * 100.0, 1_000_000, &cfg(2)).unwrap();
    let cov = default_disk_coverage(&samples);
    outcome(
        cov.fraction() >= 0.99,
        format!(
            "{}/{} cells ({:.4})",
            cov.visited,
            cov.cells_in_disk,
            cov.fraction()
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let ms = Duration::from_millis;
    let criteria: [Criterion; 12] = [
        ("digit extraction worked example", ms(1), digit_extraction),
        ("mean error bound and slope", ms(10_000), mean_error_bound),
        ("m-residual guarantee", ms(10_000), m_residual_guarantee),
        ("oracle consistency", ms(30_000), oracle_consistency),
        ("non-uniformity", ms(5_000), non_uniformity),
        ("coefficient ablation ordering", ms(10_000), ablation_ordering),
        ("packing", ms(5_000), packing),
        (
            "identity-codec equivalence",
            ms(5_000),
            identity_codec_equivalence,
        ),
        ("gradient checks", ms(5_000), gradient_checks),
        ("himmelblau descent", ms(10_000), himmelblau_descent),
        ("toy training parity", ms(60_000), toy_parity),
        ("trajectory coverage", ms(30_000), trajectory_coverage),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = out.passed && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1} ms / {} ms{}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64() * 1e3,
            budget.as_millis(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
