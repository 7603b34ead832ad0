//! Differentiable initial-value solves: encode, integrate, decode.

use std::fmt;
use std::str::FromStr;

use crate::bijection::BijectionStack;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ren::{RenMatrices, RenVars};
use crate::scalar::Real;
use crate::tensor::{Bound, Tensor, Var};

/// Largest accepted condition number of `P_proj P_projᵀ`.
pub const MAX_PROJECTION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            _ => Err(Error::invalid(format!(
                "unknown solver `{s}` (expected euler or rk4)"
            ))),
        }
    }
}

/// Fixed-step solver settings. Stored states are `duration/(horizon−1)`
/// apart, each interval split into `substeps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub horizon: usize,
    pub substeps: usize,
    pub duration: f64,
}

impl SolverConfig {
    pub fn new(method: Method, horizon: usize, substeps: usize) -> Self {
        SolverConfig {
            method,
            horizon,
            substeps,
            duration: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.substeps == 0 {
            return Err(Error::invalid("horizon and substeps must be at least 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("rollout duration must be positive"));
        }
        Ok(())
    }

    /// Integration step; zero for a single-state horizon.
    pub fn dt(&self) -> f64 {
        if self.horizon < 2 {
            return 0.0;
        }
        self.duration / ((self.horizon - 1) * self.substeps) as f64
    }

    /// Time between stored states.
    pub fn sample_interval(&self) -> f64 {
        self.dt() * self.substeps as f64
    }
}

/// Time-ordered states, one row per stored step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub states: Tensor<T>,
    pub dt: T,
}

impl<T: Real> Trajectory<T> {
    pub fn new(states: Tensor<T>, dt: T) -> Result<Self> {
        if states.rank() != 2 || states.rows() == 0 {
            return Err(Error::InvalidShape {
                op: "trajectory",
                shape: states.shape().to_vec(),
                reason: "expected a non-empty H × N matrix",
            });
        }
        if !states.is_finite() {
            return Err(Error::NonFinite {
                what: "trajectory".into(),
            });
        }
        Ok(Trajectory { states, dt })
    }

    pub fn from_rows(rows: &[Vec<T>], dt: T) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("trajectory rows differ in length"));
        }
        let data = rows.concat();
        Trajectory::new(Tensor::new(vec![rows.len(), dim], data)?, dt)
    }

    pub fn horizon(&self) -> usize {
        self.states.rows()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn state(&self, i: usize) -> &[T] {
        self.states.row(i)
    }

    pub fn initial(&self) -> &[T] {
        self.state(0)
    }

    pub fn last(&self) -> &[T] {
        self.state(self.horizon() - 1)
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.horizon())
            .map(|i| self.state(i).to_vec())
            .collect()
    }
}

/// Right inverse `Pᵀ(PPᵀ)⁻¹` of a full-row-rank projection.
pub fn pseudo_inverse_on<'t, T: Real>(proj: Var<'t, T>) -> Result<Var<'t, T>> {
    let pv = proj.value();
    let (r, c) = (pv.rows(), pv.cols());
    if pv.rank() != 2 || r > c {
        return Err(Error::InvalidShape {
            op: "pseudo_inverse",
            shape: pv.shape().to_vec(),
            reason: "projection must be N_y × N_z with N_z ≥ N_y",
        });
    }
    let pt = proj.transpose()?;
    let gram = proj.matmul(pt)?;
    let cond = linalg::spd_condition(gram.value().data(), r);
    if !(cond.as_f64() <= MAX_PROJECTION_CONDITION) {
        return Err(Error::Singular {
            op: "pseudo_inverse",
            cond: cond.as_f64(),
        });
    }
    pt.matmul(gram.inverse()?)
}

/// `P† g⁻¹(y0)`.
pub fn encode_initial_on<'t, T: Real>(
    stack: &BijectionStack,
    bound: &Bound<'t, T>,
    pinv: Var<'t, T>,
    y0: Var<'t, T>,
) -> Result<Var<'t, T>> {
    pinv.matmul(stack.inverse_on(bound, y0)?)
}

/// `g(P z)`.
pub fn decode_on<'t, T: Real>(
    stack: &BijectionStack,
    bound: &Bound<'t, T>,
    proj: Var<'t, T>,
    z: Var<'t, T>,
) -> Result<Var<'t, T>> {
    stack.forward_on(bound, proj.matmul(z)?)
}

fn step<'t, T: Real>(
    sys: &RenVars<'t, T>,
    z: Var<'t, T>,
    method: Method,
    dt: T,
) -> Result<Var<'t, T>> {
    match method {
        Method::Euler => z.add(sys.latent_derivative(z)?.scale(dt)),
        Method::Rk4 => {
            let half = dt * T::c(0.5);
            let k1 = sys.latent_derivative(z)?;
            let k2 = sys.latent_derivative(z.add(k1.scale(half))?)?;
            let k3 = sys.latent_derivative(z.add(k2.scale(half))?)?;
            let k4 = sys.latent_derivative(z.add(k3.scale(dt))?)?;
            let sum = k1
                .add(k2.scale(T::c(2.0)))?
                .add(k3.scale(T::c(2.0)))?
                .add(k4)?;
            z.add(sum.scale(dt / T::c(6.0)))
        }
    }
}

/// Unrolled integration; returns the `horizon` stored latent states, the
/// first being `z0`.
pub fn integrate_on<'t, T: Real>(
    sys: &RenVars<'t, T>,
    z0: Var<'t, T>,
    cfg: &SolverConfig,
) -> Result<Vec<Var<'t, T>>> {
    cfg.validate()?;
    let dt = T::c(cfg.dt());
    let mut out = Vec::with_capacity(cfg.horizon);
    let mut z = z0;
    out.push(z);
    let mut count = 0;
    for _ in 1..cfg.horizon {
        for _ in 0..cfg.substeps {
            count += 1;
            z = step(sys, z, cfg.method, dt).map_err(|e| match e {
                Error::EquilibriumNotConverged { .. } | Error::NonFinite { .. } => {
                    Error::IntegrationDiverged { step: count }
                }
                other => other,
            })?;
            if !z.value().is_finite() {
                return Err(Error::IntegrationDiverged { step: count });
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Full rollout as an `H × N_y` matrix on the tape.
pub fn rollout_on<'t, T: Real>(
    sys: &RenVars<'t, T>,
    stack: &BijectionStack,
    bound: &Bound<'t, T>,
    proj: Var<'t, T>,
    pinv: Var<'t, T>,
    y0: Var<'t, T>,
    cfg: &SolverConfig,
) -> Result<Var<'t, T>> {
    let z0 = encode_initial_on(stack, bound, pinv, y0)?;
    let zs = integrate_on(sys, z0, cfg)?;
    let ys = zs
        .into_iter()
        .map(|z| decode_on(stack, bound, proj, z))
        .collect::<Result<Vec<_>>>()?;
    y0.tape().stack(&ys)
}

/// Plain latent integration with fixed matrices.
pub fn integrate<T: Real>(
    mats: &RenMatrices<T>,
    z0: &[T],
    cfg: &SolverConfig,
) -> Result<Vec<Vec<T>>> {
    if z0.len() != mats.n() {
        return Err(Error::ShapeMismatch {
            op: "integrate",
            lhs: vec![mats.n()],
            rhs: vec![z0.len()],
        });
    }
    cfg.validate()?;
    let dt = T::c(cfg.dt());
    let axpy =
        |z: &[T], k: &[T], h: T| -> Vec<T> { z.iter().zip(k).map(|(&a, &b)| a + h * b).collect() };
    let f = |z: &[T], count: usize| -> Result<Vec<T>> {
        mats.latent_derivative(z).map_err(|e| match e {
            Error::EquilibriumNotConverged { .. } | Error::NonFinite { .. } => {
                Error::IntegrationDiverged { step: count }
            }
            other => other,
        })
    };
    let mut out = Vec::with_capacity(cfg.horizon);
    let mut z = z0.to_vec();
    out.push(z.clone());
    let mut count = 0;
    for _ in 1..cfg.horizon {
        for _ in 0..cfg.substeps {
            count += 1;
            z = match cfg.method {
                Method::Euler => axpy(&z, &f(&z, count)?, dt),
                Method::Rk4 => {
                    let half = dt * T::c(0.5);
                    let k1 = f(&z, count)?;
                    let k2 = f(&axpy(&z, &k1, half), count)?;
                    let k3 = f(&axpy(&z, &k2, half), count)?;
                    let k4 = f(&axpy(&z, &k3, dt), count)?;
                    let two = T::c(2.0);
                    let sum: Vec<T> = (0..z.len())
                        .map(|i| k1[i] + two * k2[i] + two * k3[i] + k4[i])
                        .collect();
                    axpy(&z, &sum, dt / T::c(6.0))
                }
            };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged { step: count });
            }
        }
        out.push(z.clone());
    }
    Ok(out)
}
