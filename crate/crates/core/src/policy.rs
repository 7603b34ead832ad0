//! Contractive imitation policy: REN latent dynamics, linear projection and
//! coupling-layer output map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bijection::{BijectionStack, DEFAULT_WIDTH};
use crate::error::{Error, Result};
use crate::init::gaussian;
use crate::ren::{ContractionRate, Ren, RenConfig, RenMatrices, RenVars};
use crate::rollout::{self, SolverConfig, Trajectory};
use crate::scalar::Real;
use crate::tensor::{Bound, ParamId, ParamSet, Tape, Tensor, Var};

/// How the contraction rate is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateConfig {
    Fixed(f64),
    /// `gamma_min + softplus(raw)`, starting at `init`.
    Learnable {
        gamma_min: f64,
        init: f64,
    },
}

impl RateConfig {
    pub fn initial(&self) -> f64 {
        match *self {
            RateConfig::Fixed(g) => g,
            RateConfig::Learnable { init, .. } => init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub state_dim: usize,
    pub latent_dim: usize,
    pub implicit_dim: usize,
    pub coupling_layers: usize,
    pub coupling_width: usize,
    pub eps: f64,
    pub eps_p: f64,
    pub rate: RateConfig,
    /// Gain of the scaled Gaussian initialization.
    pub init_gain: f64,
    /// Std of the noise filling the padding block of `[I | 0]`.
    pub proj_noise: f64,
}

impl PolicyConfig {
    pub fn new(state_dim: usize, latent_dim: usize, implicit_dim: usize) -> Self {
        PolicyConfig {
            state_dim,
            latent_dim,
            implicit_dim,
            coupling_layers: 4,
            coupling_width: DEFAULT_WIDTH,
            eps: 1e-2,
            eps_p: 1.0,
            rate: RateConfig::Fixed(1.0),
            init_gain: 0.2,
            proj_noise: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        if self.latent_dim < self.state_dim {
            return Err(Error::invalid(format!(
                "latent dimension {} is smaller than state dimension {}",
                self.latent_dim, self.state_dim
            )));
        }
        match self.rate {
            RateConfig::Fixed(g) if !(g > 0.0 && g.is_finite()) => {
                return Err(Error::invalid("contraction rate must be positive"))
            }
            RateConfig::Learnable { gamma_min, init } if !(gamma_min > 0.0 && init > gamma_min) => {
                return Err(Error::invalid("learnable rate needs 0 < gamma_min < init"))
            }
            _ => {}
        }
        if !(self.proj_noise >= 0.0 && self.init_gain >= 0.0) {
            return Err(Error::invalid("initialization scales must be non-negative"));
        }
        RenConfig {
            n: self.latent_dim,
            q: self.implicit_dim,
            eps: self.eps,
            eps_p: self.eps_p,
        }
        .validate()
    }

    fn ren(&self) -> RenConfig {
        RenConfig {
            n: self.latent_dim,
            q: self.implicit_dim,
            eps: self.eps,
            eps_p: self.eps_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub cfg: PolicyConfig,
    pub params: ParamSet<T>,
    pub ren: Ren,
    pub proj: ParamId,
    pub stack: BijectionStack,
    pub rate: ContractionRate,
}

/// A policy's parameters and assembled system recorded on one tape.
pub struct PolicyTape<'t, T> {
    pub bound: Bound<'t, T>,
    pub sys: RenVars<'t, T>,
    pub proj: Var<'t, T>,
    pub pinv: Var<'t, T>,
}

impl<T: Real> Policy<T> {
    /// Seeded initialization. Parameter registration order (and with it the
    /// random stream) is fixed: REN, projection, coupling stack, rate.
    pub fn init(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        Policy::init_with_rng(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with_rng(cfg: PolicyConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let ren = Ren::register(&mut params, cfg.ren(), cfg.init_gain, rng)?;

        let (ny, nz) = (cfg.state_dim, cfg.latent_dim);
        let noise: Tensor<T> = gaussian(rng, &[ny, nz], cfg.proj_noise);
        let mut p = noise.into_data();
        for i in 0..ny {
            for j in 0..ny {
                p[i * nz + j] = if i == j { T::one() } else { T::zero() };
            }
        }
        let proj = params.insert("proj", Tensor::raw(vec![ny, nz], p))?;

        let stack = BijectionStack::register(
            &mut params,
            ny,
            cfg.coupling_layers,
            cfg.coupling_width,
            cfg.init_gain,
            rng,
        )?;
        let rate = match cfg.rate {
            RateConfig::Fixed(g) => ContractionRate::Fixed(g),
            RateConfig::Learnable { gamma_min, init } => {
                ContractionRate::learnable(&mut params, gamma_min, init)?
            }
        };
        Ok(Policy {
            cfg,
            params,
            ren,
            proj,
            stack,
            rate,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim
    }

    pub fn gamma(&self) -> T {
        self.rate.value(&self.params)
    }

    pub fn matrices(&self) -> Result<RenMatrices<T>> {
        self.ren.assemble(&self.params, self.gamma())
    }

    pub fn projection(&self) -> &Tensor<T> {
        self.params.value(self.proj)
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape<T>) -> Result<PolicyTape<'t, T>> {
        self.on_bound(tape, self.params.bind(tape))
    }

    /// Like [`Policy::on_tape`] with externally bound parameter values laid
    /// out like `self.params`.
    pub fn on_bound<'t>(
        &self,
        tape: &'t Tape<T>,
        bound: Bound<'t, T>,
    ) -> Result<PolicyTape<'t, T>> {
        let gamma = self.rate.var(tape, &bound);
        let sys = self.ren.assemble_on(tape, &bound, gamma)?;
        let proj = bound.get(self.proj);
        let pinv = rollout::pseudo_inverse_on(proj)?;
        Ok(PolicyTape {
            bound,
            sys,
            proj,
            pinv,
        })
    }

    fn check_state(&self, y: &[T]) -> Result<()> {
        if y.len() != self.cfg.state_dim {
            return Err(Error::ShapeMismatch {
                op: "policy",
                lhs: vec![self.cfg.state_dim],
                rhs: vec![y.len()],
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "initial state".into(),
            });
        }
        Ok(())
    }

    /// Rollout from `y0` as an `H × N_y` matrix on the tape of `pt`.
    pub fn rollout_var<'t>(
        &self,
        pt: &PolicyTape<'t, T>,
        y0: &[T],
        solver: &SolverConfig,
    ) -> Result<Var<'t, T>> {
        self.check_state(y0)?;
        let tape = pt.proj.tape();
        rollout::rollout_on(
            &pt.sys,
            &self.stack,
            &pt.bound,
            pt.proj,
            pt.pinv,
            tape.vector(y0),
            solver,
        )
    }

    /// Rollout from `y0` without recording gradients.
    pub fn rollout(&self, y0: &[T], solver: &SolverConfig) -> Result<Trajectory<T>> {
        self.check_state(y0)?;
        let tape = Tape::no_grad();
        let pt = self.on_tape(&tape)?;
        let z0 = rollout::encode_initial_on(&self.stack, &pt.bound, pt.pinv, tape.vector(y0))?;
        let zs = rollout::integrate(&pt.sys.to_matrices(), &z0.to_vec(), solver)?;
        let ny = self.cfg.state_dim;
        let mut data = Vec::with_capacity(zs.len() * ny);
        for z in &zs {
            let y = rollout::decode_on(&self.stack, &pt.bound, pt.proj, tape.vector(z))?;
            data.extend(y.to_vec());
        }
        Trajectory::new(
            Tensor::new(vec![zs.len(), ny], data)?,
            T::c(solver.sample_interval()),
        )
    }

    /// Independent rollouts in parallel; output order follows `inits`.
    pub fn rollout_batch(
        &self,
        inits: &[Vec<T>],
        solver: &SolverConfig,
    ) -> Result<Vec<Trajectory<T>>> {
        inits
            .par_iter()
            .map(|y0| self.rollout(y0, solver))
            .collect()
    }

    /// Latent initial state `P† g⁻¹(y0)`.
    pub fn encode(&self, y0: &[T]) -> Result<Vec<T>> {
        self.check_state(y0)?;
        let tape = Tape::no_grad();
        let pt = self.on_tape(&tape)?;
        Ok(rollout::encode_initial_on(&self.stack, &pt.bound, pt.pinv, tape.vector(y0))?.to_vec())
    }

    /// State image `g(P z)`.
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        let tape = Tape::no_grad();
        let bound = self.params.bind(&tape);
        Ok(rollout::decode_on(&self.stack, &bound, bound.get(self.proj), tape.vector(z))?.to_vec())
    }

    /// Latent trajectory started from `encode(y0)`.
    pub fn latent_rollout(&self, y0: &[T], solver: &SolverConfig) -> Result<Vec<Vec<T>>> {
        self.check_state(y0)?;
        let z0 = self.encode(y0)?;
        rollout::integrate(&self.matrices()?, &z0, solver)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::Method;

    fn small() -> PolicyConfig {
        let mut cfg = PolicyConfig::new(2, 4, 3);
        cfg.coupling_layers = 2;
        cfg.coupling_width = 6;
        cfg
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Policy::<f64>::init(small(), 9).unwrap();
        let b = Policy::<f64>::init(small(), 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = Policy::<f64>::init(small(), 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn rollout_starts_at_initial_state() {
        let p = Policy::<f64>::init(small(), 1).unwrap();
        let solver = SolverConfig::new(Method::Rk4, 6, 2);
        let y0 = [0.8, -0.3];
        let tr = p.rollout(&y0, &solver).unwrap();
        assert_eq!(tr.horizon(), 6);
        for (a, b) in tr.initial().iter().zip(&y0) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn initial_policy_passes_lmi_check() {
        let p = Policy::<f64>::init(small(), 3).unwrap();
        let m = p.matrices().unwrap();
        assert!(m.lmi_eig_min() >= p.cfg.eps - 1e-9);
    }

    #[test]
    fn latent_smaller_than_state_is_rejected() {
        let cfg = PolicyConfig::new(3, 2, 2);
        assert!(Policy::<f64>::init(cfg, 0).is_err());
    }

    #[test]
    fn batch_matches_sequential() {
        let p = Policy::<f64>::init(small(), 4).unwrap();
        let solver = SolverConfig::new(Method::Euler, 5, 1);
        let inits = vec![vec![0.1, 0.2], vec![-1.0, 0.5], vec![0.0, 0.0]];
        let batch = p.rollout_batch(&inits, &solver).unwrap();
        for (y0, tr) in inits.iter().zip(&batch) {
            assert_eq!(&p.rollout(y0, &solver).unwrap(), tr);
        }
    }
}
