//! Invertible output map built from affine coupling layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{gaussian, scaled_std};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::{Bound, ParamId, ParamSet, Tape, Tensor, Var};

pub const DEFAULT_S_CLAMP: f64 = 5.0;
pub const DEFAULT_WIDTH: usize = 32;

/// Two-hidden-layer tanh perceptron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl Mlp {
    fn register<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        width: usize,
        output: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            w1: params.insert(
                format!("{prefix}.w1"),
                gaussian(rng, &[width, input], scaled_std(gain, input)),
            )?,
            b1: params.insert(format!("{prefix}.b1"), Tensor::zeros(&[width]))?,
            w2: params.insert(
                format!("{prefix}.w2"),
                gaussian(rng, &[width, width], scaled_std(gain, width)),
            )?,
            b2: params.insert(format!("{prefix}.b2"), Tensor::zeros(&[width]))?,
            w3: params.insert(format!("{prefix}.w3"), Tensor::zeros(&[output, width]))?,
            b3: params.insert(format!("{prefix}.b3"), Tensor::zeros(&[output]))?,
        })
    }

    fn ids(&self) -> [ParamId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }

    fn apply<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = bound
            .get(self.w1)
            .matmul(x)?
            .add(bound.get(self.b1))?
            .tanh();
        let h = bound
            .get(self.w2)
            .matmul(h)?
            .add(bound.get(self.b2))?
            .tanh();
        bound.get(self.w3).matmul(h)?.add(bound.get(self.b3))
    }
}

/// Affine coupling layer.
///
/// The static part is the first `keep` entries for parity 0 and the last
/// `keep` entries for parity 1, with `keep = ⌈dim/2⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    pub parity: usize,
    pub s_clamp: f64,
    pub s_net: Mlp,
    pub t_net: Mlp,
}

impl CouplingLayer {
    pub fn keep(&self) -> usize {
        self.dim.div_ceil(2)
    }

    pub fn moving(&self) -> usize {
        self.dim - self.keep()
    }

    /// Ranges (start, len) of the static and moving parts.
    fn split(&self) -> ((usize, usize), (usize, usize)) {
        let (k, m) = (self.keep(), self.moving());
        if self.parity == 0 {
            ((0, k), (k, m))
        } else {
            ((m, k), (0, m))
        }
    }

    fn join<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        keep: Var<'t, T>,
        moved: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if self.parity == 0 {
            tape.concat(&[keep, moved], 0)
        } else {
            tape.concat(&[moved, keep], 0)
        }
    }

    fn scale_shift<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        keep: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = self
            .s_net
            .apply(bound, keep)?
            .tanh()
            .scale(T::c(self.s_clamp));
        let t = self.t_net.apply(bound, keep)?;
        Ok((s, t))
    }

    pub fn forward_on<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if self.moving() == 0 {
            return Ok(y);
        }
        let ((ks, kl), (ms, ml)) = self.split();
        let keep = y.slice(ks, kl)?;
        let mv = y.slice(ms, ml)?;
        let (s, t) = self.scale_shift(bound, keep)?;
        let moved = mv.mul(s.exp())?.add(t)?;
        self.join(y.tape(), keep, moved)
    }

    pub fn inverse_on<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if self.moving() == 0 {
            return Ok(y);
        }
        let ((ks, kl), (ms, ml)) = self.split();
        let keep = y.slice(ks, kl)?;
        let mv = y.slice(ms, ml)?;
        let (s, t) = self.scale_shift(bound, keep)?;
        let moved = mv.sub(t)?.mul(s.neg().exp())?;
        self.join(y.tape(), keep, moved)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.s_net.ids().to_vec();
        ids.extend(self.t_net.ids());
        ids
    }
}

/// `g = g_1 ∘ … ∘ g_K`; the last layer acts first.
#[derive(Debug, Clone, PartialEq)]
pub struct BijectionStack {
    pub dim: usize,
    pub layers: Vec<CouplingLayer>,
}

impl BijectionStack {
    pub fn identity(dim: usize) -> Self {
        BijectionStack {
            dim,
            layers: Vec::new(),
        }
    }

    /// Registers `k` layers with alternating parity. Hidden weights are
    /// scaled Gaussian, biases and output layers zero, so the stack starts as
    /// the identity.
    pub fn register<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        dim: usize,
        k: usize,
        width: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || (k > 0 && width == 0) {
            return Err(Error::invalid("coupling stack needs dim ≥ 1 and width ≥ 1"));
        }
        let keep = dim.div_ceil(2);
        let moving = dim - keep;
        let mut layers = Vec::with_capacity(k);
        for i in 0..k {
            let s_net = Mlp::register(
                params,
                &format!("flow.{i}.s"),
                keep,
                width,
                moving,
                gain,
                rng,
            )?;
            let t_net = Mlp::register(
                params,
                &format!("flow.{i}.t"),
                keep,
                width,
                moving,
                gain,
                rng,
            )?;
            layers.push(CouplingLayer {
                dim,
                parity: i % 2,
                s_clamp: DEFAULT_S_CLAMP,
                s_net,
                t_net,
            });
        }
        Ok(BijectionStack { dim, layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }

    /// Overwrites every layer parameter (output layers included) with
    /// Gaussian noise of the given standard deviation.
    pub fn randomize<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet<T>,
        std: f64,
        rng: &mut R,
    ) {
        for id in self.param_ids() {
            let shape = params.value(id).shape().to_vec();
            *params.value_mut(id) = gaussian(rng, &shape, std);
        }
    }

    fn check_dim<T: Real>(&self, y: &Var<'_, T>) -> Result<()> {
        if y.shape() != [self.dim] {
            return Err(Error::ShapeMismatch {
                op: "bijection",
                lhs: vec![self.dim],
                rhs: y.shape(),
            });
        }
        Ok(())
    }

    pub fn forward_on<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_dim(&y)?;
        let mut y = y;
        for layer in self.layers.iter().rev() {
            y = layer.forward_on(bound, y)?;
        }
        Ok(y)
    }

    pub fn inverse_on<'t, T: Real>(
        &self,
        bound: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_dim(&y)?;
        let mut y = y;
        for layer in &self.layers {
            y = layer.inverse_on(bound, y)?;
        }
        Ok(y)
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, y: &[T]) -> Result<Vec<T>> {
        let tape = Tape::no_grad();
        let bound = params.bind(&tape);
        Ok(self.forward_on(&bound, tape.vector(y))?.to_vec())
    }

    pub fn inverse<T: Real>(&self, params: &ParamSet<T>, y: &[T]) -> Result<Vec<T>> {
        let tape = Tape::no_grad();
        let bound = params.bind(&tape);
        Ok(self.inverse_on(&bound, tape.vector(y))?.to_vec())
    }

    /// Largest observed ratio `‖g(a) − g(b)‖ / ‖a − b‖` over sample pairs.
    pub fn lipschitz_estimate<T: Real>(
        &self,
        params: &ParamSet<T>,
        samples: &[Vec<T>],
    ) -> Result<T> {
        let images = samples
            .iter()
            .map(|s| self.forward(params, s))
            .collect::<Result<Vec<_>>>()?;
        let mut best: Option<T> = None;
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let d = linalg::dist(&samples[i], &samples[j]);
                if d <= T::zero() {
                    continue;
                }
                let r = linalg::dist(&images[i], &images[j]) / d;
                best = Some(best.map_or(r, |b| b.max(r)));
            }
        }
        best.ok_or_else(|| Error::invalid("Lipschitz estimate needs at least two distinct samples"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stack(dim: usize, k: usize, seed: u64) -> (ParamSet<f64>, BijectionStack) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let s = BijectionStack::register(&mut ps, dim, k, 8, 1.0, &mut rng).unwrap();
        s.randomize(&mut ps, 0.5, &mut rng);
        (ps, s)
    }

    #[test]
    fn empty_stack_is_identity() {
        let ps = ParamSet::<f64>::new();
        let s = BijectionStack::identity(3);
        assert_eq!(
            s.forward(&ps, &[1.0, -2.0, 3.5]).unwrap(),
            vec![1.0, -2.0, 3.5]
        );
        assert_eq!(
            s.inverse(&ps, &[1.0, -2.0, 3.5]).unwrap(),
            vec![1.0, -2.0, 3.5]
        );
    }

    #[test]
    fn fresh_stack_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f64>::new();
        let s = BijectionStack::register(&mut ps, 4, 3, 8, 1.0, &mut rng).unwrap();
        let y = [0.3, -0.2, 1.7, 4.0];
        assert_eq!(s.forward(&ps, &y).unwrap(), y.to_vec());
    }

    #[test]
    fn round_trip() {
        for dim in [2, 3, 5] {
            let (ps, s) = stack(dim, 4, dim as u64);
            let y: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
            let back = s.inverse(&ps, &s.forward(&ps, &y).unwrap()).unwrap();
            let err = linalg::dist(&back, &y) / linalg::norm2(&y);
            assert!(err <= 1e-9, "dim {dim}: {err}");
        }
    }

    #[test]
    fn pure_translation_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::<f64>::new();
        let s = BijectionStack::register(&mut ps, 4, 1, 4, 1.0, &mut rng).unwrap();
        let b3 = s.layers[0].t_net.b3;
        *ps.value_mut(b3) = Tensor::vector(vec![0.5, -1.0]);
        let out = s.inverse(&ps, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 2.5, 5.0]);
        let lip = s
            .lipschitz_estimate(
                &ps,
                &[
                    vec![0.0; 4],
                    vec![1.0, 0.0, 2.0, 0.0],
                    vec![0.5, 0.5, 0.5, 0.5],
                ],
            )
            .unwrap();
        assert!((lip - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_split_keeps_ceiling_half() {
        let (ps, s) = stack(5, 2, 4);
        assert_eq!(s.layers[0].keep(), 3);
        let y = [0.1, 0.2, 0.3, 0.4, 0.5];
        let t = Tape::no_grad();
        let b = ps.bind(&t);
        let o = s.layers[0].forward_on(&b, t.vector(&y)).unwrap().to_vec();
        assert_eq!(&o[..3], &y[..3]);
        let o = s.layers[1].forward_on(&b, t.vector(&y)).unwrap().to_vec();
        assert_eq!(&o[2..], &y[2..]);
    }

    #[test]
    fn lipschitz_needs_two_points() {
        let ps = ParamSet::<f64>::new();
        let s = BijectionStack::identity(2);
        assert!(s
            .lipschitz_estimate(&ps, &[vec![1.0, 1.0], vec![1.0, 1.0]])
            .is_err());
    }
}
