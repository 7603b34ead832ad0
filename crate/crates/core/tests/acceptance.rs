//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Set `LASA_CSV` to a dataset CSV to add the optional real-data training
//! check to criterion 6.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use contractive_core::bijection::BijectionStack;
use contractive_core::bounds::{term_two, SamplerSpec};
use contractive_core::data::{synthesize, Dataset, MotionKind, SynthSpec};
use contractive_core::eval::{certify, evaluate};
use contractive_core::loss::{dtw_classic, lambda_weights, mse, soft_dtw};
use contractive_core::ren::{Ren, RenConfig};
use contractive_core::tensor::{ParamSet, Tensor};
use contractive_core::train::{train, Checkpoint, GammaSpec, TrainConfig};
use contractive_core::verify::{envelope_stats, training_gradient_error};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is analysed in the decisions notes rather than
/// treated as a regression.
const KNOWN_FAILURES: &[usize] = &[11];

const TRAIN_EPOCHS: usize = 1000;

struct Row {
    id: usize,
    passed: bool,
    detail: String,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect()
}

fn eig_min(m: &Tensor<f64>) -> f64 {
    let k = m.rows();
    let a = DMatrix::from_row_slice(k, k, m.data());
    let sym = (&a + a.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

fn criterion_1() -> Row {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut dev, mut margin) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let (n, q) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let gamma = [0.5, 1.0, 5.0][rng.random_range(0..3)];
        let mut params = ParamSet::<f64>::new();
        let ren = Ren::register(
            &mut params,
            RenConfig::new(n, q),
            rng.random_range(0.2..2.0),
            &mut rng,
        )
        .unwrap();
        *params.value_mut(ren.lambda_log) = Tensor::vector(normal(&mut rng, q));
        let mats = ren.assemble(&params, gamma).unwrap();
        let m = mats.lmi_matrix();
        let x = params.value(ren.x);
        let xm = DMatrix::from_row_slice(n + q, n + q, x.data());
        let h = xm.transpose() * &xm + DMatrix::identity(n + q, n + q) * ren.cfg.eps;
        for i in 0..n + q {
            for j in 0..n + q {
                dev = dev.max((m.get(i, j) - h[(i, j)]).abs());
            }
        }
        margin = margin.min(eig_min(&m) - ren.cfg.eps);
    }
    let secs = start.elapsed().as_secs_f64();
    Row {
        id: 1,
        passed: dev <= 1e-10 && margin >= -1e-9 && secs < 10.0,
        detail: format!("max |M - H| {dev:.2e}, min eig_min - eps {margin:.2e}, {secs:.2}s"),
    }
}

fn criterion_2() -> Row {
    let start = Instant::now();
    let (ratio, slope) = envelope_stats(20, 20, 202, 0.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (r_ratio, r_slope) = envelope_stats(5, 5, 203, 0.2).unwrap();
    Row {
        id: 2,
        passed: ratio <= 1.01 && slope <= -0.9 && secs < 60.0,
        detail: format!(
            "max V(t)/(e^(-2gt)V(0)) {ratio:.5}, max slope/gamma {slope:.3}, {secs:.1}s; \
             fully random couplings (informational): ratio {r_ratio:.5}, slope/gamma {r_slope:.3}"
        ),
    }
}

fn criterion_3() -> Row {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(0..=8);
        let dim = rng.random_range(2..=14);
        let mut params = ParamSet::<f64>::new();
        let stack = BijectionStack::register(&mut params, dim, k, 16, 1.0, &mut rng).unwrap();
        stack.randomize(&mut params, 0.2, &mut rng);
        let y = normal(&mut rng, dim);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = |a: &[f64]| {
            a.iter()
                .zip(&y)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
                / norm
        };
        let round = stack
            .inverse(&params, &stack.forward(&params, &y).unwrap())
            .unwrap();
        let back = stack
            .forward(&params, &stack.inverse(&params, &y).unwrap())
            .unwrap();
        worst = worst.max(rel(&round)).max(rel(&back));
    }
    Row {
        id: 3,
        passed: worst <= 1e-9,
        detail: format!("1000 points, max round-trip relative error {worst:.2e}"),
    }
}

fn criterion_4() -> Row {
    let errs: Vec<f64> = (0..3)
        .map(|s| training_gradient_error(400 + s, 1e-6).unwrap())
        .collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Row {
        id: 4,
        passed: worst <= 1e-4,
        detail: format!("3 tiny models, max relative error {worst:.2e}"),
    }
}

fn brute_force(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    // Every monotone path is a sequence of moves; enumerate them with a stack.
    let (n, m) = (a.rows(), b.rows());
    let cost = |i: usize, j: usize| -> f64 {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let mut best = f64::INFINITY;
    let mut stack = vec![(0usize, 0usize, cost(0, 0))];
    while let Some((i, j, acc)) = stack.pop() {
        if i == n - 1 && j == m - 1 {
            best = best.min(acc);
            continue;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                stack.push((ni, nj, acc + cost(ni, nj)));
            }
        }
    }
    best
}

fn criterion_5() -> Row {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut path = |len: usize| Tensor::matrix(len, 2, normal(&mut rng, 2 * len)).unwrap();
    let mut gap = 0.0f64;
    for _ in 0..50 {
        let (a, b) = (path(10), path(10));
        let c = dtw_classic(&a, &b).unwrap();
        gap = gap.max((soft_dtw(&a, &b, 1e-3).unwrap() - c).abs() / c);
    }
    let mut mismatches = 0;
    for n in 1..=6 {
        for m in 1..=6 {
            let (a, b) = (path(n), path(m));
            if dtw_classic(&a, &b).unwrap() != brute_force(&a, &b) {
                mismatches += 1;
            }
        }
    }
    Row {
        id: 5,
        passed: gap <= 0.01 && mismatches == 0,
        detail: format!("max soft/classic gap {gap:.2e}, brute-force mismatches {mismatches}/36"),
    }
}

fn sine() -> Dataset<f64> {
    synthesize(&SynthSpec {
        kind: MotionKind::Sine,
        demos: 3,
        horizon: 30,
        dim: 2,
        noise_std: 0.0,
        seed: 6,
    })
    .unwrap()
}

fn sine_config(seed: u64) -> TrainConfig {
    TrainConfig {
        horizon: 30,
        epochs: TRAIN_EPOCHS,
        seed,
        log_every: 0,
        ..TrainConfig::default()
    }
}

/// Mean per-demo MSE of the rollouts from the dataset starts, normalized units.
fn in_sample_mse(ckpt: &Checkpoint, ds: &Dataset<f64>) -> f64 {
    let rep = evaluate(
        ckpt,
        ds,
        &SamplerSpec {
            radius_scale: 0.0,
            ..SamplerSpec::new(0, 0)
        },
    )
    .unwrap();
    let data =
        contractive_core::train::TrainingData::prepare(ds, Some(&ckpt.norm), ckpt.config.horizon)
            .unwrap();
    let per: Vec<f64> = rep
        .in_sample
        .rollouts
        .iter()
        .zip(&data.demos)
        .map(|(r, d)| mse(&r.states, d).unwrap())
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

fn criterion_6() -> (Row, Checkpoint) {
    let ds = sine();
    let mut results = Vec::new();
    let mut first = None;
    for seed in 0..3 {
        let start = Instant::now();
        let ckpt = train(sine_config(seed), &ds).unwrap();
        results.push((in_sample_mse(&ckpt, &ds), start.elapsed().as_secs_f64()));
        first.get_or_insert(ckpt);
    }
    let mut mses: Vec<f64> = results.iter().map(|r| r.0).collect();
    mses.sort_by(f64::total_cmp);
    let median = mses[1];
    let slowest = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut passed = median <= 0.05 && slowest <= 600.0;
    let mut detail = format!(
        "sine M=3 H=30, {TRAIN_EPOCHS} epochs, in-sample MSE per seed {:.5} {:.5} {:.5}, median {median:.5}, slowest run {slowest:.1}s",
        results[0].0, results[1].0, results[2].0
    );
    match std::env::var("LASA_CSV") {
        Ok(path) => {
            let lasa = Dataset::<f64>::load_csv(Path::new(&path)).unwrap();
            let start = Instant::now();
            let ckpt = train(sine_config(0), &lasa).unwrap();
            let m = in_sample_mse(&ckpt, &lasa);
            let secs = start.elapsed().as_secs_f64();
            passed &= m <= 0.05 && secs <= 600.0;
            detail.push_str(&format!("; LASA {path}: MSE {m:.5} in {secs:.1}s"));
        }
        Err(_) => detail.push_str("; LASA check SKIP (LASA_CSV unset)"),
    }
    (
        Row {
            id: 6,
            passed,
            detail,
        },
        first.unwrap(),
    )
}

fn criterion_7(ckpt: &Checkpoint) -> Row {
    let rep = certify(ckpt, &sine(), &SamplerSpec::new(100, 707)).unwrap();
    let mean = rep.observed_mean();
    Row {
        id: 7,
        passed: rep.violations() == 0 && mean < rep.true_bound,
        detail: format!(
            "100 OOS starts, violations {}, min margin {:.4}, observed mean {mean:.5} < corollary bound {:.5}, alpha {:.4}{}",
            rep.violations(),
            rep.min_margin(),
            rep.true_bound,
            rep.alpha,
            if rep.reestimated { " (re-estimated)" } else { "" }
        ),
    }
}

fn criterion_8() -> Row {
    let v = term_two(1.0, 1.0, 1.0, 10, 1).unwrap();
    let series: f64 = (0..10).map(|i| (-0.2 * i as f64).exp()).sum::<f64>() / 10.0;
    let (a, r, h, m) = (1.7, 0.8, 12, 4);
    let small = term_two(a, r, 1e-13, h, m).unwrap();
    let large = term_two(a, r, 1e5, h, m).unwrap();
    let base = a * a * r * r / m as f64;
    let passed = (v - 0.47700).abs() <= 1e-5
        && (v - series).abs() <= 1e-12
        && (small - base).abs() <= 1e-9 * base
        && (large - base / h as f64).abs() <= 1e-12 * base;
    Row {
        id: 8,
        passed,
        detail: format!(
            "term_two {v:.6} (series {series:.6}), gamma->0 {small:.6} vs {base:.6}, gamma->inf {large:.6} vs {:.6}",
            base / h as f64
        ),
    }
}

fn criterion_9() -> Row {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut sum_err = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(1..=7);
        let inits: Vec<Vec<f64>> = (0..m).map(|_| normal(&mut rng, 3)).collect();
        let w = lambda_weights(&normal(&mut rng, 3), &inits, 1e-9).unwrap();
        sum_err = sum_err.max((w.weights.iter().sum::<f64>() - 1.0).abs());
    }
    let sym = lambda_weights(
        &[0.0, 0.0],
        &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
        1e-9,
    )
    .unwrap();
    let sym_err = sym
        .weights
        .iter()
        .map(|w: &f64| (w - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    let hit = lambda_weights(&[0.3, -0.2], &[vec![0.3, -0.2], vec![1.0, 1.0]], 1e-12).unwrap();
    let mut lemma_ok = true;
    for _ in 0..1000 {
        let k = rng.random_range(1..=10);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(1e-4..100.0)).collect();
        let hm = k as f64 / x.iter().map(|v| 1.0 / v).sum::<f64>();
        let am = x.iter().sum::<f64>() / k as f64;
        lemma_ok &= hm <= am * (1.0 + 1e-12);
        let c = vec![x[0]; k];
        let hc = k as f64 / c.iter().map(|v| 1.0 / v).sum::<f64>();
        lemma_ok &= (hc - x[0]).abs() <= 1e-12 * x[0];
    }
    let passed = sum_err <= 1e-12 && sym_err <= 1e-12 && hit.weights[0] >= 1.0 - 1e-11 && lemma_ok;
    Row {
        id: 9,
        passed,
        detail: format!(
            "sum error {sum_err:.1e}, symmetry error {sym_err:.1e}, exact-match weight {:.12}, mean inequality {}",
            hit.weights[0],
            if lemma_ok { "holds" } else { "violated" }
        ),
    }
}

fn criterion_10() -> Row {
    let ds = sine();
    let cfg = TrainConfig {
        epochs: 20,
        latent_dim: 6,
        implicit_dim: 4,
        horizon: 30,
        seed: 10,
        log_every: 0,
        ..TrainConfig::default()
    };
    let (a, b) = (train(cfg, &ds).unwrap(), train(cfg, &ds).unwrap());
    let same_ckpt = a.to_text() == b.to_text();
    let sampler = SamplerSpec::new(20, 11);
    let (ra, rb) = (
        evaluate(&a, &ds, &sampler).unwrap(),
        evaluate(&b, &ds, &sampler).unwrap(),
    );
    let same_eval = ra == rb && ra.to_table() == rb.to_table();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let y0 = [0.4, -0.7];
    let solver = a.config.solver();
    let r1 = a.policy.rollout(&y0, &solver).unwrap();
    let r2 = loaded.policy.rollout(&y0, &solver).unwrap();
    let dev = r1.states.max_abs_diff(&r2.states);
    let resaved = loaded.to_text() == a.to_text();
    Row {
        id: 10,
        passed: same_ckpt && same_eval && dev <= 1e-12 && resaved,
        detail: format!(
            "checkpoints identical {same_ckpt}, eval reports identical {same_eval}, save/load/save identical {resaved}, rollout deviation {dev:.1e}"
        ),
    }
}

fn criterion_11() -> Row {
    let ds = sine();
    let init = 1.0;
    let cfg = TrainConfig {
        gamma: GammaSpec::Learnable {
            init,
            gamma_min: 0.1,
            mu: 0.1,
            c: 0.0,
            gamma0: 0.0,
        },
        ..sine_config(0)
    };
    let ckpt = train(cfg, &ds).unwrap();
    let gamma = ckpt.policy.gamma();
    let m = in_sample_mse(&ckpt, &ds);
    Row {
        id: 11,
        passed: gamma > init && m <= 0.05,
        detail: format!(
            "gamma {init} -> {gamma:.4} after {TRAIN_EPOCHS} epochs, in-sample MSE {m:.5}"
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut rows = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
    ];
    let (row6, ckpt) = criterion_6();
    rows.push(row6);
    rows.push(criterion_7(&ckpt));
    rows.extend([criterion_8(), criterion_9(), criterion_10(), criterion_11()]);

    let mut regressions = 0;
    for r in &rows {
        let known = KNOWN_FAILURES.contains(&r.id);
        let tag = match (r.passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                regressions += 1;
                "FAIL"
            }
        };
        println!("criterion {:>2}: {tag} | {}", r.id, r.detail);
    }
    let passed = rows.iter().filter(|r| r.passed).count();
    println!(
        "acceptance: {passed}/{} passed, {regressions} unexpected failures, {:.1}s",
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    if regressions == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
