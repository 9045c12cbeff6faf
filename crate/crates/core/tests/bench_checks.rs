use piquant::bench::{
    himmelblau, himmelblau_grad, run_descent, train_toy, Loss, ToyModel, ToyTask, DEFAULT_STARTS,
};
use piquant::optim::{AdamConfig, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()).max(1.0)
}

#[test]
fn himmelblau_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    for _ in 0..100 {
        let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (gx, gy) = himmelblau_grad(x, y);
        let fx = (himmelblau(x + h, y) - himmelblau(x - h, y)) / (2.0 * h);
        let fy = (himmelblau(x, y + h) - himmelblau(x, y - h)) / (2.0 * h);
        assert!(
            close(gx, fx, 1e-6) && close(gy, fy, 1e-6),
            "({x}, {y}): ({gx}, {gy}) vs ({fx}, {fy})"
        );
    }
}

fn batch(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<f64> {
    (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check_model_gradients(sizes: &[usize], targets: Vec<f64>, loss: Loss) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = ToyModel::init(sizes, 5).unwrap();
    for b in &mut model.biases {
        b.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let rows = 16;
    let inputs = batch(&mut rng, rows, sizes[0]);
    let (_, grads) = model.backward(&inputs, &targets, rows, loss).unwrap();
    let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.values().to_vec()).collect();

    let h = 1e-5;
    let mut k = 0;
    let count = model.parameters_mut().count();
    for p in 0..count {
        let len = model.parameters_mut().nth(p).unwrap().len();
        for i in 0..len {
            let mut plus = model.clone();
            plus.parameters_mut().nth(p).unwrap().values_mut()[i] += h;
            let mut minus = model.clone();
            minus.parameters_mut().nth(p).unwrap().values_mut()[i] -= h;
            let numeric = (plus.loss(&inputs, &targets, rows, loss).unwrap()
                - minus.loss(&inputs, &targets, rows, loss).unwrap())
                / (2.0 * h);
            assert!(
                close(analytic[k], numeric, 1e-4),
                "tensor {p} entry {i}: {} vs {numeric}",
                analytic[k]
            );
            k += 1;
        }
    }
    assert_eq!(k, analytic.len());
}

#[test]
fn mlp_mse_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check_model_gradients(&[2, 8, 1], batch(&mut rng, 16, 1), Loss::Mse);
}

#[test]
fn mlp_cross_entropy_gradient_matches_central_differences() {
    let targets = (0..16)
        .flat_map(|r| if r % 3 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    check_model_gradients(&[2, 8, 2], targets, Loss::CrossEntropy);
}

#[test]
fn batch_order_does_not_change_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = ToyModel::init(&[2, 8, 1], 3).unwrap();
    let rows = 16;
    let inputs = batch(&mut rng, rows, 2);
    let targets = batch(&mut rng, rows, 1);
    let perm: Vec<usize> = (0..rows).rev().map(|r| (r * 5) % rows).collect();
    let px: Vec<f64> = perm
        .iter()
        .flat_map(|&r| inputs[2 * r..2 * r + 2].to_vec())
        .collect();
    let pt: Vec<f64> = perm.iter().map(|&r| targets[r]).collect();
    let (la, ga) = model.backward(&inputs, &targets, rows, Loss::Mse).unwrap();
    let (lb, gb) = model.backward(&px, &pt, rows, Loss::Mse).unwrap();
    assert!((la - lb).abs() <= 1e-12);
    for (a, b) in ga.tensors().zip(gb.tensors()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn descent_from_origin_reaches_a_minimum() {
    let cfg = AdamConfig::default().with_learning_rate(0.01);
    for kind in [OptimizerKind::Adam, OptimizerKind::PiAdam { lambda: 2 }] {
        let run = run_descent(kind, cfg, (0.0, 0.0), 2000).unwrap();
        assert_eq!(run.trajectory.len(), 2001);
        assert!(run.trajectory.iter().all(|t| t.2.is_finite()));
        assert!(run.final_f <= 1e-3, "{}: {}", run.optimizer, run.final_f);
    }
}

#[test]
fn every_default_start_runs_to_completion() {
    let cfg = AdamConfig::default().with_learning_rate(0.01);
    for start in DEFAULT_STARTS {
        let run = run_descent(OptimizerKind::Adam, cfg, start, 2000).unwrap();
        assert!(!run.diverged);
        assert!(run.final_f <= 1e-3, "{start:?}: {}", run.final_f);
    }
}

#[test]
fn adam_fits_the_regression_task() {
    let run = train_toy(
        ToyTask::Regression,
        OptimizerKind::Adam,
        AdamConfig::default(),
        200,
        42,
    )
    .unwrap();
    assert_eq!(run.losses.len(), 201);
    assert!(
        run.final_loss() < 0.1 * run.losses[0],
        "{:?}",
        (run.losses[0], run.final_loss())
    );
}

#[test]
fn adam_separates_the_moons() {
    let run = train_toy(
        ToyTask::TwoMoons,
        OptimizerKind::Adam,
        AdamConfig::default(),
        100,
        42,
    )
    .unwrap();
    assert!(
        run.final_loss() < 0.5 * run.losses[0],
        "{:?}",
        (run.losses[0], run.final_loss())
    );
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = AdamConfig::default();
    for kind in [OptimizerKind::Adam, OptimizerKind::PiAdam { lambda: 2 }] {
        let a = train_toy(ToyTask::Regression, kind, cfg, 20, 7).unwrap();
        let b = train_toy(ToyTask::Regression, kind, cfg, 20, 7).unwrap();
        let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.losses), bits(&b.losses));
    }
}

#[test]
fn loss_gap_shrinks_with_more_digits() {
    let cfg = AdamConfig::default();
    let avg = |kind| {
        [42u64, 43, 44]
            .iter()
            .map(|&s| {
                train_toy(ToyTask::Regression, kind, cfg, 200, s)
                    .unwrap()
                    .final_loss()
            })
            .sum::<f64>()
            / 3.0
    };
    let full = avg(OptimizerKind::Adam);
    let gaps: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&lambda| (avg(OptimizerKind::PiAdam { lambda }) - full).abs())
        .collect();
    assert!(
        gaps[0] >= gaps[1] && gaps[1] >= gaps[2],
        "gaps for lambda 1, 2, 4: {gaps:?}"
    );
}
