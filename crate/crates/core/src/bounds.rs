//! Out-of-sample loss certificates for contractive policies.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::lambda_weights;
use crate::policy::Policy;
use crate::rollout::SolverConfig;
use crate::scalar::Real;

/// Factor applied to the Monte Carlo contraction constant before it enters a
/// bound.
pub const ALPHA_SAFETY: f64 = 1.2;
/// Initial-state pairs closer than this are skipped by [`estimate_alpha`].
pub const MIN_PAIR_DISTANCE: f64 = 1e-8;

/// `{y : Σ_m ‖y − y0^m‖ ≤ R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseRegion<T> {
    pub foci: Vec<Vec<T>>,
    pub r: T,
}

impl<T: Real> EllipseRegion<T> {
    pub fn new(foci: Vec<Vec<T>>, r: T) -> Result<Self> {
        if foci.is_empty() {
            return Err(Error::invalid("region needs at least one focus"));
        }
        if !(r >= T::zero()) {
            return Err(Error::invalid("region scale R must be non-negative"));
        }
        Ok(EllipseRegion { foci, r })
    }

    /// Smallest region around `foci` that contains every point.
    pub fn enclosing(foci: Vec<Vec<T>>, points: &[Vec<T>]) -> Result<Self> {
        let r = points
            .iter()
            .map(|p| focal_sum(&foci, p))
            .fold(T::zero(), |a, b| a.max(b));
        EllipseRegion::new(foci, r)
    }

    pub fn focal_sum(&self, y: &[T]) -> T {
        focal_sum(&self.foci, y)
    }

    /// Membership and slack `Σ‖y − y0^m‖ − R` (non-positive inside).
    pub fn in_region(&self, y: &[T]) -> (bool, T) {
        let slack = self.focal_sum(y) - self.r;
        (slack <= T::zero(), slack)
    }
}

pub fn focal_sum<T: Real>(foci: &[Vec<T>], y: &[T]) -> T {
    foci.iter().map(|f| linalg::dist(f, y)).sum()
}

/// Second term of the worst-case bound,
/// `α²R²(e^{−2γ} − 1) / (H·M·(e^{−2γ/H} − 1))`.
///
/// Falls back to the finite geometric series
/// `(α²R²/M)·(1/H)·Σ_{i<H} e^{−2γi/H}` when the closed form is 0/0.
pub fn term_two(alpha: f64, r: f64, gamma: f64, horizon: usize, m: usize) -> Result<f64> {
    if !(gamma > 0.0) || horizon == 0 || m == 0 {
        return Err(Error::invalid("term two needs gamma > 0, H ≥ 1 and M ≥ 1"));
    }
    let h = horizon as f64;
    let scale = alpha * alpha * r * r / m as f64;
    let den = (-2.0 * gamma / h).exp_m1();
    if horizon == 1 || den.abs() < 1e-12 {
        let s: f64 = (0..horizon)
            .map(|i| (-2.0 * gamma * i as f64 / h).exp())
            .sum();
        return Ok(scale * s / h);
    }
    Ok(scale * (-2.0 * gamma).exp_m1() / (h * den))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub alpha: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub r: f64,
    /// `ℓ(ŷ^m, y^m)` under MSE, one per demonstration.
    pub per_demo_mse: Vec<f64>,
}

impl BoundInputs {
    pub fn m(&self) -> usize {
        self.per_demo_mse.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_demo_mse.is_empty() {
            return Err(Error::invalid(
                "bound inputs need at least one demonstration",
            ));
        }
        if self.per_demo_mse.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("per-demo losses must be non-negative"));
        }
        if !(self.alpha >= 0.0 && self.r >= 0.0 && self.gamma > 0.0) || self.horizon == 0 {
            return Err(Error::invalid("bound inputs must be positive"));
        }
        Ok(())
    }

    pub fn term_two(&self) -> Result<f64> {
        term_two(self.alpha, self.r, self.gamma, self.horizon, self.m())
    }
}

/// Worst-case loss bound at an in-region initial state: the λ-weighted
/// per-demo losses plus [`term_two`].
pub fn worst_case_bound(
    y0: &[f64],
    inits: &[Vec<f64>],
    inputs: &BoundInputs,
    eps_dist: f64,
) -> Result<f64> {
    inputs.validate()?;
    if inits.len() != inputs.m() {
        return Err(Error::invalid(
            "one initial state per demonstration is required",
        ));
    }
    let region = EllipseRegion::new(inits.to_vec(), inputs.r)?;
    let (inside, slack) = region.in_region(y0);
    if !inside {
        return Err(Error::OutsideRegion { slack });
    }
    let lam = lambda_weights(y0, inits, eps_dist)?;
    Ok(lam.combine(&inputs.per_demo_mse) + inputs.term_two()?)
}

/// Bound on the expected loss over any initial-state distribution supported
/// in the region: worst per-demo loss plus [`term_two`].
pub fn true_loss_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let worst = inputs.per_demo_mse.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(worst + inputs.term_two()?)
}

/// Monte Carlo contraction constant: the largest
/// `‖ŷ^a(t) − ŷ^b(t)‖·e^{γt} / ‖ŷ^a(0) − ŷ^b(0)‖` over sample pairs and
/// stored steps. No safety factor is applied.
pub fn estimate_alpha<T: Real>(
    policy: &Policy<T>,
    inits: &[Vec<T>],
    solver: &SolverConfig,
) -> Result<f64> {
    if inits.len() < 2 {
        return Err(Error::invalid(
            "alpha estimation needs at least two initial states",
        ));
    }
    let trajs = policy.rollout_batch(inits, solver)?;
    let gamma = policy.gamma().as_f64();
    let interval = solver.sample_interval();
    let growth: Vec<f64> = (0..solver.horizon)
        .map(|i| (gamma * interval * i as f64).exp())
        .collect();
    let mut best: Option<f64> = None;
    for a in 0..trajs.len() {
        for b in a + 1..trajs.len() {
            let d0 = linalg::dist(trajs[a].initial(), trajs[b].initial()).as_f64();
            if d0 < MIN_PAIR_DISTANCE {
                continue;
            }
            for (i, g) in growth.iter().enumerate() {
                let d = linalg::dist(trajs[a].state(i), trajs[b].state(i)).as_f64();
                let ratio = d * g / d0;
                best = Some(best.map_or(ratio, |x: f64| x.max(ratio)));
            }
        }
    }
    best.ok_or_else(|| Error::invalid("every sampled pair of initial states is degenerate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Uniform in a ball of radius `radius_scale·‖y0^m‖` around a uniformly
    /// chosen demonstration start.
    Hypersphere,
    /// Uniform over a multi-focal region that contains all those balls.
    RegionUniform,
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerMode::Hypersphere => "hypersphere",
            SamplerMode::RegionUniform => "region-uniform",
        })
    }
}

impl FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypersphere" => Ok(SamplerMode::Hypersphere),
            "region-uniform" | "region_uniform" => Ok(SamplerMode::RegionUniform),
            _ => Err(Error::invalid(format!("unknown sampler mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    pub radius_scale: f64,
    pub seed: u64,
    pub count: usize,
}

impl SamplerSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        SamplerSpec {
            mode: SamplerMode::Hypersphere,
            radius_scale: 0.1,
            seed,
            count,
        }
    }
}
