//! Continuous-time recurrent equilibrium network with a free parameterization
//! that is contractive for every parameter value.
//!
//! Latent dynamics: `ż = A z + B1 w`, `w = tanh(C1 z + D11 w)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{gaussian, scaled_std};
use crate::linalg::{self, Lu};
use crate::scalar::{self, Real};
use crate::tensor::{Bound, ParamId, ParamSet, Tape, Tensor, Var};

pub const EQUILIBRIUM_TOL: f64 = 1e-10;
pub const EQUILIBRIUM_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenConfig {
    /// Latent dimension.
    pub n: usize,
    /// Implicit-layer width.
    pub q: usize,
    pub eps: f64,
    pub eps_p: f64,
}

impl RenConfig {
    pub fn new(n: usize, q: usize) -> Self {
        RenConfig {
            n,
            q,
            eps: 1e-2,
            eps_p: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.q == 0 {
            return Err(Error::invalid("REN dimensions must be positive"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite() && self.eps_p > 0.0 && self.eps_p.is_finite()) {
            return Err(Error::invalid("REN margins eps and eps_p must be positive"));
        }
        Ok(())
    }
}

/// Contraction rate, either fixed or `gamma_min + softplus(raw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContractionRate {
    Fixed(f64),
    Learnable { gamma_min: f64, raw: ParamId },
}

impl ContractionRate {
    /// Registers the raw parameter so that the effective rate starts at
    /// `gamma_init` (which must exceed `gamma_min`).
    pub fn learnable<T: Real>(
        params: &mut ParamSet<T>,
        gamma_min: f64,
        gamma_init: f64,
    ) -> Result<Self> {
        if !(gamma_min > 0.0) || !(gamma_init > gamma_min) {
            return Err(Error::invalid(format!(
                "learnable rate needs 0 < gamma_min < gamma_init, got {gamma_min} and {gamma_init}"
            )));
        }
        let raw = scalar::softplus_inv(gamma_init - gamma_min);
        let raw = params.insert("gamma_raw", Tensor::scalar(T::c(raw)))?;
        Ok(ContractionRate::Learnable { gamma_min, raw })
    }

    pub fn value<T: Real>(&self, params: &ParamSet<T>) -> T {
        match *self {
            ContractionRate::Fixed(g) => T::c(g),
            ContractionRate::Learnable { gamma_min, raw } => {
                T::c(gamma_min) + scalar::softplus(params.value(raw).item())
            }
        }
    }

    pub fn var<'t, T: Real>(&self, tape: &'t Tape<T>, bound: &Bound<'t, T>) -> Var<'t, T> {
        match *self {
            ContractionRate::Fixed(g) => tape.scalar(T::c(g)),
            ContractionRate::Learnable { gamma_min, raw } => {
                bound.get(raw).softplus().add_scalar(T::c(gamma_min))
            }
        }
    }

    pub fn floor(&self) -> f64 {
        match *self {
            ContractionRate::Fixed(g) => g,
            ContractionRate::Learnable { gamma_min, .. } => gamma_min,
        }
    }
}

/// Free REN parameters registered inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ren {
    pub cfg: RenConfig,
    pub x: ParamId,
    pub x_p: ParamId,
    pub lambda_log: ParamId,
    pub s_a: ParamId,
    pub s_d: ParamId,
    pub b1: ParamId,
}

impl Ren {
    /// Registers the free parameters with scaled Gaussian entries
    /// (`std = gain/√fan_in`) and `lambda_log = 0`.
    pub fn register<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        cfg: RenConfig,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (n, q) = (cfg.n, cfg.q);
        let x = params.insert(
            "ren.x",
            gaussian(rng, &[n + q, n + q], scaled_std(gain, n + q)),
        )?;
        let x_p = params.insert("ren.x_p", gaussian(rng, &[n, n], scaled_std(gain, n)))?;
        let lambda_log = params.insert("ren.lambda_log", Tensor::zeros(&[q]))?;
        let s_a = params.insert("ren.s_a", gaussian(rng, &[n, n], scaled_std(gain, n)))?;
        let s_d = params.insert("ren.s_d", gaussian(rng, &[q, q], scaled_std(gain, q)))?;
        let b1 = params.insert("ren.b1", gaussian(rng, &[n, q], scaled_std(gain, q)))?;
        Ok(Ren {
            cfg,
            x,
            x_p,
            lambda_log,
            s_a,
            s_d,
            b1,
        })
    }

    /// Registers all-zero free parameters.
    pub fn register_zeros<T: Real>(params: &mut ParamSet<T>, cfg: RenConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, q) = (cfg.n, cfg.q);
        Ok(Ren {
            cfg,
            x: params.insert("ren.x", Tensor::zeros(&[n + q, n + q]))?,
            x_p: params.insert("ren.x_p", Tensor::zeros(&[n, n]))?,
            lambda_log: params.insert("ren.lambda_log", Tensor::zeros(&[q]))?,
            s_a: params.insert("ren.s_a", Tensor::zeros(&[n, n]))?,
            s_d: params.insert("ren.s_d", Tensor::zeros(&[q, q]))?,
            b1: params.insert("ren.b1", Tensor::zeros(&[n, q]))?,
        })
    }

    /// Differentiable assembly on `tape`.
    pub fn assemble_on<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        bound: &Bound<'t, T>,
        gamma: Var<'t, T>,
    ) -> Result<RenVars<'t, T>> {
        let (n, q) = (self.cfg.n, self.cfg.q);
        let x = bound.get(self.x);
        let x_p = bound.get(self.x_p);
        let eps_i = tape.constant(Tensor::diag(&vec![T::c(self.cfg.eps); n + q]));
        let eps_p_i = tape.constant(Tensor::diag(&vec![T::c(self.cfg.eps_p); n]));

        let h = x.transpose()?.matmul(x)?.add(eps_i)?;
        let h11 = h.block(0, 0, n, n)?;
        let h12 = h.block(0, n, n, q)?;
        let h22 = h.block(n, n, q, q)?;
        let p = x_p.transpose()?.matmul(x_p)?.add(eps_p_i)?;

        let lambda_log = bound.get(self.lambda_log);
        let lambda = lambda_log.exp();
        let lambda_m = lambda.diag()?;
        let lambda_inv = lambda_log.neg().exp().diag()?;

        let two_gamma_p = p.scale_by(gamma)?.scale(T::c(2.0));
        let a_rhs = h11
            .add(two_gamma_p)?
            .scale(T::c(-0.5))
            .add(bound.get(self.s_a).skew()?)?;
        let a = p.inverse()?.matmul(a_rhs)?;

        let d_rhs = lambda_m
            .sub(h22.scale(T::c(0.5)))?
            .add(bound.get(self.s_d).skew()?)?;
        let d11 = lambda_inv.matmul(d_rhs)?;

        let b1 = bound.get(self.b1);
        let c_rhs = h12.transpose()?.add(b1.transpose()?.matmul(p)?)?;
        let c1 = lambda_inv.matmul(c_rhs)?.neg();

        let vars = RenVars {
            a,
            b1,
            c1,
            d11,
            p,
            lambda,
            gamma,
        };
        vars.check_finite()?;
        Ok(vars)
    }

    /// `XᵀX + εI`, the matrix the assembled LMI block matrix reproduces.
    pub fn h_matrix<T: Real>(&self, params: &ParamSet<T>) -> Tensor<T> {
        let k = self.cfg.n + self.cfg.q;
        let x = params.value(self.x).data();
        let xt = linalg::transpose(x, k, k);
        let mut h = linalg::matmul(&xt, x, k, k, k);
        for i in 0..k {
            h[i * k + i] = h[i * k + i] + T::c(self.cfg.eps);
        }
        Tensor::raw(vec![k, k], h)
    }

    /// Assembled matrices as plain values.
    pub fn assemble<T: Real>(&self, params: &ParamSet<T>, gamma: T) -> Result<RenMatrices<T>> {
        if !(gamma > T::zero()) {
            return Err(Error::invalid(format!(
                "contraction rate must be positive, got {gamma}"
            )));
        }
        let tape = Tape::no_grad();
        let bound = params.bind(&tape);
        let g = tape.scalar(gamma);
        Ok(self.assemble_on(&tape, &bound, g)?.to_matrices())
    }
}

/// Assembled system living on a tape.
#[derive(Clone, Copy)]
pub struct RenVars<'t, T> {
    pub a: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub c1: Var<'t, T>,
    pub d11: Var<'t, T>,
    pub p: Var<'t, T>,
    /// Diagonal of Λ.
    pub lambda: Var<'t, T>,
    pub gamma: Var<'t, T>,
}

impl<'t, T: Real> RenVars<'t, T> {
    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("A", self.a),
            ("B1", self.b1),
            ("C1", self.c1),
            ("D11", self.d11),
            ("P", self.p),
            ("Lambda", self.lambda),
        ] {
            if !v.value().is_finite() {
                return Err(Error::NonFinite {
                    what: format!("assembled {name}"),
                });
            }
        }
        Ok(())
    }

    pub fn to_matrices(&self) -> RenMatrices<T> {
        RenMatrices {
            a: (*self.a.value()).clone(),
            b1: (*self.b1.value()).clone(),
            c1: (*self.c1.value()).clone(),
            d11: (*self.d11.value()).clone(),
            p: (*self.p.value()).clone(),
            lambda: self.lambda.to_vec(),
            gamma: self.gamma.item(),
        }
    }

    /// `ż = A z + B1 w` with `w` the implicit-layer equilibrium.
    pub fn latent_derivative(&self, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.c1.matmul(z)?;
        let w = equilibrium(b, self.d11)?;
        self.a.matmul(z)?.add(self.b1.matmul(w)?)
    }
}

/// Assembled contractive system as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RenMatrices<T> {
    pub a: Tensor<T>,
    pub b1: Tensor<T>,
    pub c1: Tensor<T>,
    pub d11: Tensor<T>,
    pub p: Tensor<T>,
    pub lambda: Vec<T>,
    pub gamma: T,
}

impl<T: Real> RenMatrices<T> {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn q(&self) -> usize {
        self.d11.rows()
    }

    /// Constants on `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape<T>) -> RenVars<'t, T> {
        RenVars {
            a: tape.constant(self.a.clone()),
            b1: tape.constant(self.b1.clone()),
            c1: tape.constant(self.c1.clone()),
            d11: tape.constant(self.d11.clone()),
            p: tape.constant(self.p.clone()),
            lambda: tape.vector(&self.lambda),
            gamma: tape.scalar(self.gamma),
        }
    }

    pub fn latent_derivative(&self, z: &[T]) -> Result<Vec<T>> {
        let (n, q) = (self.n(), self.q());
        let b = linalg::matvec(self.c1.data(), z, q, n);
        let (w, _) = solve_equilibrium(&b, self.d11.data())?;
        let az = linalg::matvec(self.a.data(), z, n, n);
        let bw = linalg::matvec(self.b1.data(), &w, n, q);
        Ok(az.iter().zip(&bw).map(|(&x, &y)| x + y).collect())
    }

    /// Block matrix
    /// `[[−AᵀP − PA − 2γP, −C1ᵀΛ − PB1], [−ΛC1 − B1ᵀP, 2Λ − ΛD11 − D11ᵀΛ]]`.
    pub fn lmi_matrix(&self) -> Tensor<T> {
        let (n, q) = (self.n(), self.q());
        let a = self.a.data();
        let p = self.p.data();
        let at = linalg::transpose(a, n, n);
        let atp = linalg::matmul(&at, p, n, n, n);
        let pa = linalg::matmul(p, a, n, n, n);
        let pb1 = linalg::matmul(p, self.b1.data(), n, n, q);
        let two_g = self.gamma + self.gamma;
        let lam = &self.lambda;
        let (c1, d) = (self.c1.data(), self.d11.data());

        let size = n + q;
        let mut m = vec![T::zero(); size * size];
        for i in 0..n {
            for j in 0..n {
                m[i * size + j] = -atp[i * n + j] - pa[i * n + j] - two_g * p[i * n + j];
            }
            for j in 0..q {
                // (C1ᵀΛ)_{ij} = C1_{ji} Λ_j
                let v = -c1[j * n + i] * lam[j] - pb1[i * q + j];
                m[i * size + n + j] = v;
                m[(n + j) * size + i] = v;
            }
        }
        for i in 0..q {
            for j in 0..q {
                let two_l = if i == j { lam[i] + lam[i] } else { T::zero() };
                m[(n + i) * size + n + j] = two_l - lam[i] * d[i * q + j] - d[j * q + i] * lam[j];
            }
        }
        Tensor::raw(vec![size, size], m)
    }

    /// Smallest eigenvalue of the symmetrized LMI matrix.
    pub fn lmi_eig_min(&self) -> T {
        let m = self.lmi_matrix();
        let k = m.rows();
        let sym = m.zip_map(&m.transpose(), |a, b| (a + b) * T::c(0.5));
        linalg::sym_eigenvalues(sym.data(), k)[0]
    }

    /// `dzᵀ P dz`.
    pub fn metric_energy(&self, dz: &[T]) -> T {
        let n = self.n();
        linalg::dot(dz, &linalg::matvec(self.p.data(), dz, n, n))
    }

    /// Condition number of P.
    pub fn metric_condition(&self) -> T {
        linalg::spd_condition(self.p.data(), self.n())
    }
}

fn residual_norm<T: Real>(w: &[T], b: &[T], d: &[T], q: usize) -> (T, Vec<T>, Vec<T>) {
    let dw = linalg::matvec(d, w, q, q);
    let t: Vec<T> = b.iter().zip(&dw).map(|(&bi, &x)| (bi + x).tanh()).collect();
    let r: Vec<T> = w.iter().zip(&t).map(|(&wi, &ti)| wi - ti).collect();
    let norm = r.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    (norm, r, t)
}

/// Solves `w = tanh(b + D w)` by damped Newton iteration.
///
/// Returns the solution and the iteration count. The residual
/// `max|w − tanh(b + D w)|` is at most [`EQUILIBRIUM_TOL`] on success.
pub fn solve_equilibrium<T: Real>(b: &[T], d: &[T]) -> Result<(Vec<T>, usize)> {
    let q = b.len();
    let tol = T::c(EQUILIBRIUM_TOL);
    let mut w: Vec<T> = b.iter().map(|v| v.tanh()).collect();
    let (mut res, mut r, mut t) = residual_norm(&w, b, d, q);
    let mut polish = 0;
    for it in 0..EQUILIBRIUM_MAX_ITERS {
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            // A couple of extra steps push the residual to round-off level.
            if res == T::zero() || polish == 2 {
                return Ok((w, it));
            }
            polish += 1;
        }
        // J = I − diag(1 − t²) D
        let mut jac = vec![T::zero(); q * q];
        for i in 0..q {
            let s = T::one() - t[i] * t[i];
            for j in 0..q {
                jac[i * q + j] = -s * d[i * q + j];
            }
            jac[i * q + i] = jac[i * q + i] + T::one();
        }
        let step = match Lu::factor(&jac, q) {
            Ok(lu) => lu.solve(&r),
            // Fall back to a plain fixed-point step.
            Err(_) => r.clone(),
        };
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<T> = w
                .iter()
                .zip(&step)
                .map(|(&wi, &s)| wi - scale * s)
                .collect();
            let (cres, cr, ct) = residual_norm(&cand, b, d, q);
            if cres < res || (cres <= tol && cres <= res) {
                w = cand;
                res = cres;
                r = cr;
                t = ct;
                accepted = true;
                break;
            }
            scale = scale * T::c(0.5);
        }
        if !accepted {
            if res <= tol {
                return Ok((w, it));
            }
            break;
        }
    }
    if res <= tol {
        return Ok((w, EQUILIBRIUM_MAX_ITERS));
    }
    Err(Error::EquilibriumNotConverged {
        residual: res.as_f64(),
        iterations: EQUILIBRIUM_MAX_ITERS,
    })
}

/// Differentiable equilibrium `w = tanh(b + D w)`.
///
/// The backward pass uses the implicit function theorem: with
/// `S = diag(1 − w²)` and `u = (I − S D)⁻ᵀ ḡ`, the input gradients are
/// `∂b = S u` and `∂D = (S u) wᵀ`.
pub fn equilibrium<'t, T: Real>(b: Var<'t, T>, d: Var<'t, T>) -> Result<Var<'t, T>> {
    let (bv, dv) = (b.value(), d.value());
    let q = bv.len();
    if bv.rank() != 1 || dv.shape() != [q, q] {
        return Err(Error::ShapeMismatch {
            op: "equilibrium",
            lhs: bv.shape().to_vec(),
            rhs: dv.shape().to_vec(),
        });
    }
    let (w, _) = solve_equilibrium(bv.data(), dv.data())?;
    Ok(b.tape()
        .record("equilibrium", Tensor::vector(w), &[b, d], |g, inp, out| {
            let q = out.len();
            let w = out.data();
            let d = inp[1].data();
            let s: Vec<T> = w.iter().map(|&x| T::one() - x * x).collect();
            let mut jac = vec![T::zero(); q * q];
            for i in 0..q {
                for j in 0..q {
                    jac[i * q + j] = -s[i] * d[i * q + j];
                }
                jac[i * q + i] = jac[i * q + i] + T::one();
            }
            let u = match Lu::factor(&jac, q) {
                Ok(lu) => lu.solve_transpose(g.data()),
                Err(_) => vec![T::nan(); q],
            };
            let su: Vec<T> = s.iter().zip(&u).map(|(&a, &b)| a * b).collect();
            let mut gd = Vec::with_capacity(q * q);
            for &a in &su {
                for &wj in w {
                    gd.push(a * wj);
                }
            }
            vec![Tensor::vector(su), Tensor::raw(vec![q, q], gd)]
        }))
}
