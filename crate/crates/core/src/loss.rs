//! Trajectory discrepancies and the training objectives built from them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::{Tensor, Var};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_EPS_DIST: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Mse,
    SoftDtw { beta: f64 },
}

impl Metric {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::SoftDtw { beta } if !(beta > 0.0 && beta.is_finite()) => Err(Error::invalid(
                format!("soft-DTW smoothing must be positive, got {beta}"),
            )),
            _ => Ok(()),
        }
    }

    /// Discrepancy between two `H × N` trajectories on the tape.
    pub fn eval_on<'t, T: Real>(&self, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        match *self {
            Metric::Mse => mse_on(a, b),
            Metric::SoftDtw { beta } => soft_dtw_on(a, b, T::c(beta)),
        }
    }

    pub fn eval<T: Real>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
        match *self {
            Metric::Mse => mse(a, b),
            Metric::SoftDtw { beta } => soft_dtw(a, b, T::c(beta)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mse => f.write_str("mse"),
            Metric::SoftDtw { .. } => f.write_str("soft_dtw"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "soft_dtw" | "soft-dtw" | "sdtw" => Ok(Metric::SoftDtw { beta: DEFAULT_BETA }),
            _ => Err(Error::invalid(format!(
                "unknown metric `{s}` (expected mse or soft_dtw)"
            ))),
        }
    }
}

fn check_pair<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    equal_len: bool,
) -> Result<()> {
    let bad = a.rank() != 2
        || b.rank() != 2
        || a.cols() != b.cols()
        || a.rows() == 0
        || b.rows() == 0
        || (equal_len && a.rows() != b.rows());
    if bad {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `(1/H) Σ_i ‖a_i − b_i‖²`.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    check_pair("mse", a, b, true)?;
    let s: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(s / T::from_usize_lossy(a.rows()))
}

pub fn mse_on<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let (av, bv) = (a.value(), b.value());
    check_pair("mse", &av, &bv, true)?;
    let h = T::from_usize_lossy(av.rows());
    Ok(a.sub(b)?.square().sum().scale(T::one() / h))
}

fn sq_cost<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (n, m) = (a.rows(), b.rows());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            c.push(linalg::sq_dist(a.row(i), b.row(j)));
        }
    }
    c
}

/// Forward soft-DTW table plus, for each cell, the soft-min weights of its
/// three predecessors (diagonal, up, left).
fn soft_dtw_table<T: Real>(cost: &[T], n: usize, m: usize, beta: T) -> (T, Vec<[T; 3]>) {
    let w = m + 1;
    let inf = T::infinity();
    let mut r = vec![inf; (n + 1) * w];
    r[0] = T::zero();
    let mut weights = vec![[T::zero(); 3]; n * m];
    for i in 1..=n {
        for j in 1..=m {
            let prev = [r[(i - 1) * w + j - 1], r[(i - 1) * w + j], r[i * w + j - 1]];
            let lo = prev.iter().fold(inf, |a, &b| a.min(b));
            let e = prev.map(|p| {
                if p == inf {
                    T::zero()
                } else {
                    (-(p - lo) / beta).exp()
                }
            });
            let z = e[0] + e[1] + e[2];
            let smin = lo - beta * z.ln();
            r[i * w + j] = cost[(i - 1) * m + j - 1] + smin;
            weights[(i - 1) * m + j - 1] = e.map(|v| v / z);
        }
    }
    (r[n * w + m], weights)
}

/// Soft-DTW with smoothing `beta` over squared Euclidean costs.
pub fn soft_dtw<T: Real>(a: &Tensor<T>, b: &Tensor<T>, beta: T) -> Result<T> {
    check_pair("soft_dtw", a, b, false)?;
    if !(beta > T::zero()) {
        return Err(Error::invalid("soft-DTW smoothing must be positive"));
    }
    let cost = sq_cost(a, b);
    Ok(soft_dtw_table(&cost, a.rows(), b.rows(), beta).0)
}

/// Differentiable soft-DTW. The backward pass runs the dynamic program in
/// reverse, spreading each cell's adjoint over its predecessors with the
/// stored soft-min weights.
pub fn soft_dtw_on<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>, beta: T) -> Result<Var<'t, T>> {
    let (av, bv) = (a.value(), b.value());
    check_pair("soft_dtw", &av, &bv, false)?;
    if !(beta > T::zero()) {
        return Err(Error::invalid("soft-DTW smoothing must be positive"));
    }
    let (n, m) = (av.rows(), bv.rows());
    let cost = sq_cost(&av, &bv);
    let (value, weights) = soft_dtw_table(&cost, n, m, beta);
    Ok(a.tape().record(
        "soft_dtw",
        Tensor::scalar(value),
        &[a, b],
        move |g, inp, _| {
            let (a, b) = (inp[0], inp[1]);
            let d = a.cols();
            let mut e = vec![T::zero(); n * m];
            e[n * m - 1] = g.item();
            for i in (0..n).rev() {
                for j in (0..m).rev() {
                    let v = e[i * m + j];
                    if v == T::zero() {
                        continue;
                    }
                    let wt = weights[i * m + j];
                    if i > 0 && j > 0 {
                        e[(i - 1) * m + j - 1] = e[(i - 1) * m + j - 1] + v * wt[0];
                    }
                    if i > 0 {
                        e[(i - 1) * m + j] = e[(i - 1) * m + j] + v * wt[1];
                    }
                    if j > 0 {
                        e[i * m + j - 1] = e[i * m + j - 1] + v * wt[2];
                    }
                }
            }
            let mut ga = vec![T::zero(); n * d];
            let mut gb = vec![T::zero(); m * d];
            for i in 0..n {
                for j in 0..m {
                    let v = e[i * m + j];
                    if v == T::zero() {
                        continue;
                    }
                    for k in 0..d {
                        let diff = (a.get(i, k) - b.get(j, k)) * (v + v);
                        ga[i * d + k] = ga[i * d + k] + diff;
                        gb[j * d + k] = gb[j * d + k] - diff;
                    }
                }
            }
            vec![Tensor::raw(vec![n, d], ga), Tensor::raw(vec![m, d], gb)]
        },
    ))
}

/// Classic dynamic time warping with hard minima.
pub fn dtw_classic<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    check_pair("dtw", a, b, false)?;
    let (n, m) = (a.rows(), b.rows());
    let cost = sq_cost(a, b);
    let w = m + 1;
    let mut r = vec![T::infinity(); (n + 1) * w];
    r[0] = T::zero();
    for i in 1..=n {
        for j in 1..=m {
            let best = r[(i - 1) * w + j - 1]
                .min(r[(i - 1) * w + j])
                .min(r[i * w + j - 1]);
            r[i * w + j] = cost[(i - 1) * m + j - 1] + best;
        }
    }
    Ok(r[n * w + m])
}

/// Convex combination weights over demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    pub weights: Vec<T>,
}

impl<T: Real> WeightVector<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ λ_m x_m`.
    pub fn combine(&self, values: &[T]) -> T {
        self.weights.iter().zip(values).map(|(&w, &v)| w * v).sum()
    }
}

/// `λ_m ∝ 1/max(‖y0_hat − y0^m‖², eps_dist)`, normalized to sum to one.
pub fn lambda_weights<T: Real>(
    y0_hat: &[T],
    inits: &[Vec<T>],
    eps_dist: T,
) -> Result<WeightVector<T>> {
    if inits.is_empty() {
        return Err(Error::invalid("weights need at least one demonstration"));
    }
    if !(eps_dist > T::zero()) {
        return Err(Error::invalid("eps_dist must be positive"));
    }
    let raw: Vec<T> = inits
        .iter()
        .map(|y| T::one() / linalg::sq_dist(y0_hat, y).max(eps_dist))
        .collect();
    let total: T = raw.iter().copied().sum();
    Ok(WeightVector {
        weights: raw.into_iter().map(|v| v / total).collect(),
    })
}

/// `Σ_m λ_m(y0) ℓ(rollout, demo_m)` with the weights held constant.
pub fn weighted_loss_on<'t, T: Real>(
    rollout: Var<'t, T>,
    y0: &[T],
    demos: &[Tensor<T>],
    metric: Metric,
    eps_dist: T,
) -> Result<Var<'t, T>> {
    let inits: Vec<Vec<T>> = demos.iter().map(|d| d.row(0).to_vec()).collect();
    let lam = lambda_weights(y0, &inits, eps_dist)?;
    let tape = rollout.tape();
    let mut total: Option<Var<'t, T>> = None;
    for (demo, &w) in demos.iter().zip(&lam.weights) {
        if w == T::zero() {
            continue;
        }
        let term = metric
            .eval_on(rollout, tape.constant(demo.clone()))?
            .scale(w);
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::invalid("all weights vanished"))
}

/// Plain version of [`weighted_loss_on`].
pub fn weighted_loss<T: Real>(
    rollout: &Tensor<T>,
    y0: &[T],
    demos: &[Tensor<T>],
    metric: Metric,
    eps_dist: T,
) -> Result<T> {
    let inits: Vec<Vec<T>> = demos.iter().map(|d| d.row(0).to_vec()).collect();
    let lam = lambda_weights(y0, &inits, eps_dist)?;
    let per = demos
        .iter()
        .map(|d| metric.eval(rollout, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(lam.combine(&per))
}

/// `(1/M) Σ_m ℓ(ŷ^m, y^m)` for rollouts started at each demo's first state.
pub fn empirical_loss<T: Real>(
    rollouts: &[Tensor<T>],
    demos: &[Tensor<T>],
    metric: Metric,
) -> Result<T> {
    if rollouts.len() != demos.len() || demos.is_empty() {
        return Err(Error::invalid("one rollout per demonstration is required"));
    }
    let mut total = T::zero();
    for (r, d) in rollouts.iter().zip(demos) {
        total = total + metric.eval(r, d)?;
    }
    Ok(total / T::from_usize_lossy(demos.len()))
}

fn check_rate<T: Real>(gamma: T, gamma0: T) -> Result<()> {
    if !(gamma > gamma0) {
        return Err(Error::invalid(format!(
            "augmented loss needs gamma > gamma0, got {gamma} ≤ {gamma0}"
        )));
    }
    Ok(())
}

/// `L − μ(1/(γ − γ0)² − c)`.
pub fn augmented_loss<T: Real>(empirical: T, gamma: T, mu: T, c: T, gamma0: T) -> Result<T> {
    check_rate(gamma, gamma0)?;
    let d = gamma - gamma0;
    Ok(empirical - mu * (T::one() / (d * d) - c))
}

pub fn augmented_loss_on<'t, T: Real>(
    empirical: Var<'t, T>,
    gamma: Var<'t, T>,
    mu: T,
    c: T,
    gamma0: T,
) -> Result<Var<'t, T>> {
    check_rate(gamma.item(), gamma0)?;
    let h = gamma.add_scalar(-gamma0).square().recip();
    empirical.add(h.add_scalar(-c).scale(-mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn traj(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::matrix(rows.len(), 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn mse_constant_offset() {
        let a = traj(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
        let b = a.map(|v| v + 0.5);
        assert!((mse(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!(mse(&a, &traj(&[[0.0, 0.0]])).is_err());
    }

    #[test]
    fn single_point_soft_dtw_is_squared_distance() {
        let a = traj(&[[1.0, 2.0]]);
        let b = traj(&[[4.0, -2.0]]);
        assert!((soft_dtw(&a, &b, 0.1).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn dtw_ignores_speed() {
        let a = traj(&[[0.0, 0.0], [1.0, 0.5], [2.0, 2.0]]);
        let b = traj(&[
            [0.0, 0.0],
            [0.0, 0.0],
            [1.0, 0.5],
            [1.0, 0.5],
            [2.0, 2.0],
            [2.0, 2.0],
        ]);
        assert_eq!(dtw_classic(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn soft_dtw_identical_is_slightly_negative() {
        let a = traj(&[[0.3, 0.1], [0.9, -0.4], [1.0, 0.0], [0.2, 0.2]]);
        let v = soft_dtw(&a, &a, 1e-4).unwrap();
        assert!((-0.01..=0.0).contains(&v), "{v}");
    }

    #[test]
    fn soft_dtw_gradient() {
        let a = traj(&[[0.3, 0.1], [0.9, -0.4], [1.0, 0.0]]);
        let b = traj(&[[0.0, 0.2], [0.5, -0.1], [1.2, 0.3], [0.7, 0.7]]);
        let err = crate::tensor::grad_check(
            |tape, x| soft_dtw_on(x, tape.constant(b.clone()), 0.1),
            &a,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn weight_examples() {
        let w = lambda_weights(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, -1.0]], 1e-9).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        let w = lambda_weights(&[0.0f64], &[vec![1.0], vec![2.0]], 1e-9).unwrap();
        assert!((w.weights[0] - 0.8).abs() < 1e-15 && (w.weights[1] - 0.2).abs() < 1e-15);
        let w = lambda_weights(&[1.0], &[vec![1.0], vec![2.0]], 1e-12).unwrap();
        assert!(w.weights[0] >= 1.0 - 1e-11);
    }

    #[test]
    fn augmented_examples() {
        assert!((augmented_loss(1.0f64, 2.0, 0.1, 0.0, 0.0).unwrap() - 0.975).abs() < 1e-15);
        assert_eq!(augmented_loss(1.3, 2.0, 0.0, 0.0, 0.0).unwrap(), 1.3);
        assert!((augmented_loss(1.0f64, 1e12, 0.1, 2.0, 0.0).unwrap() - 1.2).abs() < 1e-12);
        assert!(augmented_loss(1.0, 0.5, 0.1, 0.0, 0.5).is_err());
        let tape = Tape::<f64>::new();
        let v = augmented_loss_on(tape.scalar(1.0), tape.scalar(2.0), 0.1, 0.0, 0.0).unwrap();
        assert!((v.item() - 0.975).abs() < 1e-15);
    }

    #[test]
    fn single_demo_weighted_loss_is_metric() {
        let a = traj(&[[0.3, 0.1], [0.9, -0.4]]);
        let b = traj(&[[0.0, 0.2], [0.5, -0.1]]);
        let wl = weighted_loss(&a, &[5.0, 5.0], std::slice::from_ref(&b), Metric::Mse, 1e-9).unwrap();
        assert_eq!(wl, mse(&a, &b).unwrap());
    }
}
