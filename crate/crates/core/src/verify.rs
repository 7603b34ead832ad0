//! Self-checks bundling the library's verifiable claims. Each suite draws
//! its own random instances from a seed and reports one pass/fail outcome.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bijection::BijectionStack;
use crate::data::{synthesize, MotionKind, SynthSpec};
use crate::error::Result;
use crate::linalg;
use crate::loss::{self, lambda_weights, Metric};
use crate::policy::{Policy, PolicyConfig, RateConfig};
use crate::ren::{Ren, RenConfig};
use crate::rollout::{Method, SolverConfig};
use crate::tensor::{grad_check_params, ParamSet, Tensor};
use crate::train::{training_loss_on, TrainConfig, TrainingData};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:<12} {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random REN assemblies: the LMI block matrix must reproduce `XᵀX + εI`
/// entrywise and keep its smallest eigenvalue above ε.
///
/// `break_lmi` perturbs each assembled A with non-skew noise, which must make
/// the suite fail.
pub fn lmi_suite(trials: usize, seed: u64, break_lmi: bool) -> Outcome {
    timed("lmi", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst_dev, mut worst_margin) = (0.0f64, f64::INFINITY);
        for _ in 0..trials {
            let n = rng.random_range(2..=16);
            let q = rng.random_range(2..=16);
            let gamma = [0.5, 1.0, 5.0][rng.random_range(0..3)];
            let gain = rng.random_range(0.2..2.0);
            let mut params = ParamSet::<f64>::new();
            let ren = Ren::register(&mut params, RenConfig::new(n, q), gain, &mut rng)?;
            *params.value_mut(ren.lambda_log) =
                Tensor::vector(normal_vec(&mut rng, q)).map(|v| 0.5 * v);
            let mut mats = ren.assemble(&params, gamma)?;
            if break_lmi {
                let bump: Vec<f64> = normal_vec(&mut rng, n * n)
                    .iter()
                    .map(|v| 0.1 * v)
                    .collect();
                for (a, b) in mats.a.data_mut().iter_mut().zip(&bump) {
                    *a += b;
                }
            }
            let h = ren.h_matrix(&params);
            worst_dev = worst_dev.max(mats.lmi_matrix().max_abs_diff(&h));
            worst_margin = worst_margin.min(mats.lmi_eig_min() - ren.cfg.eps);
        }
        let passed = worst_dev <= 1e-10 && worst_margin >= -1e-9;
        Ok((
            passed,
            format!("{trials} systems, max |M - H| {worst_dev:.2e}, min eig_min - eps {worst_margin:.2e}"),
        ))
    })
}

/// Coupling stacks with random weights: forward∘inverse and inverse∘forward
/// return the input to relative precision `1e-9`.
pub fn bijection_suite(points: usize, seed: u64) -> Outcome {
    timed("bijection", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let stacks: Vec<(BijectionStack, ParamSet<f64>)> = (0..=8)
            .map(|k| -> Result<_> {
                let dim = rng.random_range(2..=14);
                let mut params = ParamSet::new();
                let stack = BijectionStack::register(&mut params, dim, k, 16, 1.0, &mut rng)?;
                stack.randomize(&mut params, 0.2, &mut rng);
                Ok((stack, params))
            })
            .collect::<Result<_>>()?;
        for i in 0..points {
            let (stack, params) = &stacks[i % stacks.len()];
            let y = normal_vec(&mut rng, stack.dim);
            let scale = linalg::norm2(&y).max(1e-12);
            let back = stack.inverse(params, &stack.forward(params, &y)?)?;
            let fwd = stack.forward(params, &stack.inverse(params, &y)?)?;
            worst = worst
                .max(linalg::dist(&back, &y) / scale)
                .max(linalg::dist(&fwd, &y) / scale);
        }
        Ok((
            worst <= 1e-9,
            format!("{points} points, K 0..8, max relative error {worst:.2e}"),
        ))
    })
}

/// Least-squares slope of `ys` against `ts`.
fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let var: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    cov / var
}

/// A freshly initialized policy with random dimensions, coupling depth and
/// seed. With `coupling_std > 0` every coupling weight, output layers
/// included, is redrawn from `N(0, coupling_std²)`.
pub fn random_policy(rng: &mut ChaCha8Rng, gamma: f64, coupling_std: f64) -> Result<Policy<f64>> {
    let ny = rng.random_range(2..=3);
    let mut cfg = PolicyConfig::new(ny, ny + rng.random_range(0..=3), rng.random_range(2..=6));
    cfg.coupling_layers = rng.random_range(0..=3);
    cfg.coupling_width = 8;
    cfg.rate = RateConfig::Fixed(gamma);
    let mut policy = Policy::init(cfg, rng.random())?;
    if coupling_std > 0.0 {
        policy
            .stack
            .randomize(&mut policy.params, coupling_std, rng);
    }
    Ok(policy)
}

/// Worst latent envelope ratio `V(t)/(e^{−2γt}V(0))` and worst state-space
/// log-distance slope over the second half, divided by γ.
pub fn envelope_stats(
    policies: usize,
    pairs: usize,
    seed: u64,
    coupling_std: f64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let solver = SolverConfig {
        method: Method::Rk4,
        horizon: 101,
        substeps: 10,
        duration: 1.0,
    };
    let h = solver.sample_interval();
    let (mut worst_ratio, mut worst_slope) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..policies {
        let gamma = [0.5, 1.0, 5.0][rng.random_range(0..3)];
        let policy = random_policy(&mut rng, gamma, coupling_std)?;
        let mats = policy.matrices()?;
        let ny = policy.state_dim();
        let starts: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
            .map(|_| (normal_vec(&mut rng, ny), normal_vec(&mut rng, ny)))
            .collect();
        let per_pair = starts
            .par_iter()
            .map(|(ya, yb)| -> Result<(f64, f64)> {
                let (za, zb) = (
                    policy.latent_rollout(ya, &solver)?,
                    policy.latent_rollout(yb, &solver)?,
                );
                let energy = |i: usize| -> f64 {
                    let dz: Vec<f64> = za[i].iter().zip(&zb[i]).map(|(a, b)| a - b).collect();
                    mats.metric_energy(&dz)
                };
                let v0 = energy(0);
                let ratio = (0..za.len())
                    .map(|i| energy(i) / ((-2.0 * gamma * h * i as f64).exp() * v0))
                    .fold(0.0f64, f64::max);
                let half = solver.horizon / 2;
                let ts: Vec<f64> = (half..solver.horizon).map(|i| i as f64 * h).collect();
                let logs = (half..solver.horizon)
                    .map(|i| {
                        Ok(linalg::dist(&policy.decode(&za[i])?, &policy.decode(&zb[i])?).ln())
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok((ratio, slope(&ts, &logs) / gamma))
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, s) in per_pair {
            worst_ratio = worst_ratio.max(r);
            worst_slope = worst_slope.max(s);
        }
    }
    Ok((worst_ratio, worst_slope))
}

/// For freshly initialized random policies and initial-state pairs: the
/// latent metric energy of the difference stays under `e^{−2γt}V(0)·1.01`,
/// and the state-space log-distance falls at least at `0.9γ` over the second
/// half. The same statistics on policies with fully random coupling weights
/// are appended to the detail line without affecting the outcome.
pub fn envelope_suite(policies: usize, pairs: usize, seed: u64) -> Outcome {
    timed("envelope", || {
        let (ratio, slope) = envelope_stats(policies, pairs, seed, 0.0)?;
        let (r_ratio, r_slope) =
            envelope_stats(policies.div_ceil(4), pairs.div_ceil(4), seed ^ 0xc0, 0.2)?;
        Ok((
            ratio <= 1.01 && slope <= -0.9,
            format!(
                "{policies}x{pairs} pairs, max V(t)/(e^(-2gt)V(0)) {ratio:.4}, max slope/gamma {slope:.3}; \
                 random couplings (not gated): ratio {r_ratio:.4}, slope/gamma {r_slope:.3}"
            ),
        ))
    })
}

/// Tape gradient of the full training objective against central differences
/// on a tiny model.
pub fn gradient_suite(seed: u64) -> Outcome {
    timed("gradients", || {
        let worst = training_gradient_error(seed, 1e-6)?;
        Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
    })
}

/// Maximum relative error between the analytic gradient of the soft-DTW
/// training loss and central differences (`N_y = 2`, `N_z = 3`, `N_v = 2`,
/// `K = 2`, `H = 5`, `M = 2`).
pub fn training_gradient_error(seed: u64, step: f64) -> Result<f64> {
    let ds = synthesize(&SynthSpec {
        kind: MotionKind::Sine,
        demos: 2,
        horizon: 20,
        dim: 2,
        noise_std: 0.0,
        seed,
    })?;
    let cfg = TrainConfig {
        latent_dim: 3,
        implicit_dim: 2,
        coupling_layers: 2,
        coupling_width: 4,
        horizon: 5,
        metric: Metric::SoftDtw { beta: 0.1 },
        seed,
        ..TrainConfig::default()
    };
    let data = TrainingData::prepare(&ds, None, cfg.horizon)?;
    let mut policy = Policy::init(cfg.policy_config(2), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    policy.stack.randomize(&mut policy.params, 0.3, &mut rng);
    grad_check_params(
        |tape, bound| {
            let pt = policy.on_bound(tape, bound.clone())?;
            Ok(training_loss_on(&policy, &pt, &data, &cfg)?.1)
        },
        &policy.params,
        step,
    )
}

/// Minimum over every monotone alignment path, enumerated explicitly.
pub fn dtw_brute_force(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    fn walk(a: &Tensor<f64>, b: &Tensor<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + linalg::sq_dist(a.row(i), b.row(j));
        let (n, m) = (a.rows(), b.rows());
        if i + 1 == n && j + 1 == m {
            *best = best.min(acc);
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < n {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < m {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// soft-DTW at small β approaches classic DTW, and classic DTW equals the
/// exhaustive minimum over alignments.
pub fn dtw_suite(pairs: usize, seed: u64) -> Outcome {
    timed("dtw", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random_path = |rng: &mut ChaCha8Rng, len: usize| -> Result<Tensor<f64>> {
            Tensor::matrix(len, 2, normal_vec(rng, 2 * len))
        };
        let mut worst_gap = 0.0f64;
        for _ in 0..pairs {
            let (a, b) = (random_path(&mut rng, 10)?, random_path(&mut rng, 10)?);
            let classic = loss::dtw_classic(&a, &b)?;
            let soft = loss::soft_dtw(&a, &b, 1e-3)?;
            worst_gap = worst_gap.max((soft - classic).abs() / classic.abs().max(1e-12));
        }
        let mut mismatches = 0;
        for n in 1..=6 {
            for m in 1..=6 {
                let (a, b) = (random_path(&mut rng, n)?, random_path(&mut rng, m)?);
                if loss::dtw_classic(&a, &b)? != dtw_brute_force(&a, &b) {
                    mismatches += 1;
                }
            }
        }
        Ok((
            worst_gap <= 0.01 && mismatches == 0,
            format!("{pairs} pairs, max soft/classic gap {worst_gap:.2e}, brute-force mismatches {mismatches}"),
        ))
    })
}

/// `σ_min(P)² ≤ ‖Pv‖²/‖v‖²` with equality along the matching eigenvector of
/// `PᵀP`, the harmonic/arithmetic mean inequality with equality at constant
/// vectors, and the basic λ-weight identities.
pub fn lemma_suite(trials: usize, seed: u64) -> Outcome {
    timed("lemmas", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut failures = Vec::new();
        for _ in 0..trials {
            let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let p = normal_vec(&mut rng, m * n);
            let ptp = linalg::matmul(&linalg::transpose(&p, m, n), &p, n, m, n);
            let (vals, vecs) = linalg::sym_eigen(&ptp, n);
            let smin2 = vals[0].max(0.0);
            let rayleigh =
                |v: &[f64]| linalg::norm2(&linalg::matvec(&p, v, m, n)).powi(2) / linalg::dot(v, v);
            let v = normal_vec(&mut rng, n);
            if smin2 > rayleigh(&v) * (1.0 + 1e-12) + 1e-12 {
                failures.push("courant-fischer");
            }
            let u: Vec<f64> = (0..n).map(|k| vecs[k * n]).collect();
            if (rayleigh(&u) - smin2).abs() > 1e-9 * (1.0 + smin2) {
                failures.push("courant-fischer equality");
            }

            let k = rng.random_range(1..=8);
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(1e-3..10.0)).collect();
            let harmonic = k as f64 / x.iter().map(|v| 1.0 / v).sum::<f64>();
            let arithmetic = x.iter().sum::<f64>() / k as f64;
            if harmonic > arithmetic * (1.0 + 1e-12) {
                failures.push("mean inequality");
            }
            let c = vec![x[0]; k];
            let (hc, ac) = (
                k as f64 / c.iter().map(|v| 1.0 / v).sum::<f64>(),
                c.iter().sum::<f64>() / k as f64,
            );
            if (hc - ac).abs() > 1e-12 * ac {
                failures.push("mean equality");
            }

            let inits: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, 2)).collect();
            let w = lambda_weights(&normal_vec(&mut rng, 2), &inits, 1e-9)?;
            if (w.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                failures.push("weights sum");
            }
        }
        failures.dedup();
        Ok((
            failures.is_empty(),
            if failures.is_empty() {
                format!("{trials} random instances")
            } else {
                format!("violated: {}", failures.join(", "))
            },
        ))
    })
}

/// Every suite at the sizes used by the `verify` command.
pub fn run_all(seed: u64, break_lmi: bool) -> Vec<Outcome> {
    vec![
        lmi_suite(100, seed, break_lmi),
        bijection_suite(1000, seed.wrapping_add(1)),
        envelope_suite(10, 10, seed.wrapping_add(2)),
        gradient_suite(seed.wrapping_add(3)),
        dtw_suite(50, seed.wrapping_add(4)),
        lemma_suite(1000, seed.wrapping_add(5)),
    ]
}
