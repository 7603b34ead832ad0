//! Differentiable op suite on [`Var`].

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{self, Real};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn matmul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.rank() != 2 {
        return Err(mismatch());
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    match b.rank() {
        1 if b.shape()[0] == k => Ok(Tensor::vector(linalg::matvec(a.data(), b.data(), m, k))),
        2 if b.shape()[0] == k => {
            let n = b.shape()[1];
            Ok(Tensor::raw(
                vec![m, n],
                linalg::matmul(a.data(), b.data(), m, k, n),
            ))
        }
        _ => Err(mismatch()),
    }
}

fn outer<T: Real>(u: &[T], v: &[T]) -> Tensor<T> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        for &b in v {
            out.push(a * b);
        }
    }
    Tensor::raw(vec![u.len(), v.len()], out)
}

impl<'t, T: Real> Var<'t, T> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        dfdx: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(f);
        self.tape.record(op, out, &[self], move |g, inp, out| {
            let d: Vec<T> = g
                .data()
                .iter()
                .zip(inp[0].data())
                .zip(out.data())
                .map(|((&g, &x), &y)| g * dfdx(x, y))
                .collect();
            vec![Tensor::raw(inp[0].shape().to_vec(), d)]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        Ok(self.tape.record("add", out, &[self, other], |g, _, _| {
            vec![g.clone(), g.clone()]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.tape.record("sub", out, &[self, other], |g, _, _| {
            vec![g.clone(), g.map(|v| -v)]
        }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape.record("mul", out, &[self, other], |g, inp, _| {
            vec![
                g.zip_map(inp[1], |g, b| g * b),
                g.zip_map(inp[0], |g, a| g * a),
            ]
        }))
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x / y);
        Ok(self.tape.record("div", out, &[self, other], |g, inp, out| {
            vec![
                g.zip_map(inp[1], |g, b| g / b),
                Tensor::raw(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(inp[1].data())
                        .zip(out.data())
                        .map(|((&g, &b), &q)| -g * q / b)
                        .collect(),
                ),
            ]
        }))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    /// Multiplication by a constant.
    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * s);
        self.tape
            .record("scale", out, &[self], move |g, _, _| vec![g.map(|v| v * s)])
    }

    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + s);
        self.tape
            .record("add_scalar", out, &[self], |g, _, _| vec![g.clone()])
    }

    /// Product with a tracked scalar (scalar-tensor broadcast).
    pub fn scale_by(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let sv = s.value();
        if !sv.is_scalar() {
            return Err(Error::InvalidShape {
                op: "scale_by",
                shape: sv.shape().to_vec(),
                reason: "factor must be a scalar",
            });
        }
        let k = sv.item();
        let out = self.value().map(|v| v * k);
        Ok(self.tape.record("scale_by", out, &[self, s], |g, inp, _| {
            let k = inp[1].item();
            let ds = g
                .data()
                .iter()
                .zip(inp[0].data())
                .fold(T::zero(), |acc, (&g, &x)| acc + g * x);
            vec![
                g.map(|v| v * k),
                Tensor::raw(inp[1].shape().to_vec(), vec![ds]),
            ]
        }))
    }

    /// Matrix product; `other` may be a matrix or a vector.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = matmul_values(&self.value(), &other.value())?;
        Ok(self
            .tape
            .record("matmul", out, &[self, other], |g, inp, _| {
                let (a, b) = (inp[0], inp[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                if b.rank() == 1 {
                    let ga = outer(g.data(), b.data());
                    let gb = linalg::matvec_t(a.data(), g.data(), m, k);
                    vec![ga, Tensor::raw(vec![k], gb)]
                } else {
                    let n = b.shape()[1];
                    let bt = linalg::transpose(b.data(), k, n);
                    let at = linalg::transpose(a.data(), m, k);
                    let ga = linalg::matmul(g.data(), &bt, m, n, k);
                    let gb = linalg::matmul(&at, g.data(), k, m, n);
                    vec![Tensor::raw(vec![m, k], ga), Tensor::raw(vec![k, n], gb)]
                }
            }))
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: x.shape().to_vec(),
                reason: "expected a matrix",
            });
        }
        Ok(self
            .tape
            .record("transpose", x.transpose(), &[self], |g, _, _| {
                vec![g.transpose()]
            }))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary("log", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary("square", |x| x * x, |x, _| T::c(2.0) * x)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| T::c(0.5) / y)
    }

    pub fn recip(self) -> Var<'t, T> {
        self.unary("recip", |x| T::one() / x, |_, y| -y * y)
    }

    pub fn softplus(self) -> Var<'t, T> {
        self.unary("softplus", scalar::softplus, |x, _| scalar::sigmoid(x))
    }

    pub fn sum(self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record("sum", out, &[self], |g, inp, _| {
            vec![Tensor::full(inp[0].shape(), g.item())]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::from_usize_lossy(self.len());
        self.sum().scale(T::one() / n)
    }

    /// Euclidean norm of all elements; the gradient at zero is taken as zero.
    pub fn norm(self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().norm());
        self.tape.record("norm", out, &[self], |g, inp, out| {
            let n = out.item();
            if n == T::zero() {
                vec![Tensor::zeros(inp[0].shape())]
            } else {
                let k = g.item() / n;
                vec![inp[0].map(|x| x * k)]
            }
        })
    }

    /// `log Σ exp(x)` over all elements, with max-shift.
    pub fn logsumexp(self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.is_empty() {
            return Err(Error::InvalidShape {
                op: "logsumexp",
                shape: x.shape().to_vec(),
                reason: "empty input",
            });
        }
        let out = Tensor::scalar(logsumexp_values(x.data()));
        Ok(self.tape.record("logsumexp", out, &[self], |g, inp, out| {
            let lse = out.item();
            let gv = g.item();
            vec![inp[0].map(|x| gv * (x - lse).exp())]
        }))
    }

    /// Matrix inverse via LU with partial pivoting;
    /// backward uses `d(A⁻¹) = −A⁻¹ dA A⁻¹`.
    pub fn inverse(self) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
            return Err(Error::InvalidShape {
                op: "inverse",
                shape: a.shape().to_vec(),
                reason: "expected a square matrix",
            });
        }
        let n = a.shape()[0];
        let inv = linalg::Lu::factor(a.data(), n)
            .map_err(|e| match e {
                Error::Singular { cond, .. } => Error::Singular {
                    op: "inverse",
                    cond,
                },
                other => other,
            })?
            .inverse();
        let out = Tensor::raw(vec![n, n], inv);
        Ok(self.tape.record("inverse", out, &[self], move |g, _, out| {
            let it = linalg::transpose(out.data(), n, n);
            let tmp = linalg::matmul(&it, g.data(), n, n, n);
            let ga = linalg::matmul(&tmp, &it, n, n, n);
            vec![Tensor::raw(
                vec![n, n],
                ga.into_iter().map(|v| -v).collect(),
            )]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = (*x).clone().reshaped(shape)?;
        Ok(self.tape.record("reshape", out, &[self], |g, inp, _| {
            vec![Tensor::raw(inp[0].shape().to_vec(), g.data().to_vec())]
        }))
    }

    /// Contiguous range of a vector.
    pub fn slice(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 1 || start + len > x.len() {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: x.shape().to_vec(),
                reason: "range out of bounds for a vector",
            });
        }
        let out = Tensor::vector(x.data()[start..start + len].to_vec());
        Ok(self.tape.record("slice", out, &[self], move |g, inp, _| {
            let mut d = vec![T::zero(); inp[0].len()];
            d[start..start + len].copy_from_slice(g.data());
            vec![Tensor::vector(d)]
        }))
    }

    /// Sub-matrix `[r0, r0+rows) × [c0, c0+cols)`.
    pub fn block(self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || r0 + rows > x.rows() || c0 + cols > x.cols() {
            return Err(Error::InvalidShape {
                op: "block",
                shape: x.shape().to_vec(),
                reason: "block out of bounds",
            });
        }
        let nc = x.cols();
        let mut d = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            d.extend_from_slice(&x.data()[i * nc + c0..i * nc + c0 + cols]);
        }
        let out = Tensor::raw(vec![rows, cols], d);
        Ok(self.tape.record("block", out, &[self], move |g, inp, _| {
            let nc = inp[0].cols();
            let mut d = vec![T::zero(); inp[0].len()];
            for i in 0..rows {
                for j in 0..cols {
                    d[(r0 + i) * nc + c0 + j] = g.data()[i * cols + j];
                }
            }
            vec![Tensor::raw(inp[0].shape().to_vec(), d)]
        }))
    }

    /// Diagonal matrix from a vector.
    pub fn diag(self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 1 {
            return Err(Error::InvalidShape {
                op: "diag",
                shape: x.shape().to_vec(),
                reason: "expected a vector",
            });
        }
        let out = Tensor::diag(x.data());
        Ok(self.tape.record("diag", out, &[self], |g, inp, _| {
            let n = inp[0].len();
            vec![Tensor::vector(
                (0..n).map(|i| g.data()[i * n + i]).collect(),
            )]
        }))
    }

    /// Skew-symmetric part `(S − Sᵀ)/2`.
    pub fn skew(self) -> Result<Var<'t, T>> {
        let t = self.transpose()?;
        Ok(self.sub(t)?.scale(T::c(0.5)))
    }
}

impl<T: Real> Tape<T> {
    /// Concatenation along `axis` (0 for vectors; 0 or 1 for matrices).
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rank = first.rank();
        if values.iter().any(|v| v.rank() != rank) || rank == 0 || axis >= rank {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first.shape().to_vec(),
                reason: "inconsistent ranks or axis",
            });
        }
        let (out, splits) = if rank == 1 {
            let mut d = Vec::new();
            let mut splits = Vec::new();
            for v in &values {
                splits.push(v.len());
                d.extend_from_slice(v.data());
            }
            (Tensor::vector(d), splits)
        } else if axis == 0 {
            let cols = first.cols();
            let mut d = Vec::new();
            let mut splits = Vec::new();
            for v in &values {
                if v.cols() != cols {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                splits.push(v.rows());
                d.extend_from_slice(v.data());
            }
            let rows = splits.iter().sum();
            (Tensor::raw(vec![rows, cols], d), splits)
        } else {
            let rows = first.rows();
            if let Some(v) = values.iter().find(|v| v.rows() != rows) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            let splits: Vec<usize> = values.iter().map(|v| v.cols()).collect();
            let cols: usize = splits.iter().sum();
            let mut d = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &values {
                    d.extend_from_slice(v.row(i));
                }
            }
            (Tensor::raw(vec![rows, cols], d), splits)
        };
        Ok(self.record("concat", out, parts, move |g, inp, _| {
            if g.rank() == 1 || axis == 0 {
                let mut off = 0;
                inp.iter()
                    .map(|x| {
                        let n = x.len();
                        let t = Tensor::raw(x.shape().to_vec(), g.data()[off..off + n].to_vec());
                        off += n;
                        t
                    })
                    .collect()
            } else {
                let total = g.cols();
                let mut off = 0;
                inp.iter()
                    .zip(&splits)
                    .map(|(x, &c)| {
                        let mut d = Vec::with_capacity(x.len());
                        for i in 0..x.rows() {
                            d.extend_from_slice(&g.data()[i * total + off..i * total + off + c]);
                        }
                        off += c;
                        Tensor::raw(x.shape().to_vec(), d)
                    })
                    .collect()
            }
        }))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack<'t>(&'t self, rows: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let n = rows.len();
        let cat = self.concat(rows, 0)?;
        let d = cat.len() / n.max(1);
        if rows.iter().any(|r| r.value().rank() != 1 || r.len() != d) {
            return Err(Error::invalid("stack expects equal-length vectors"));
        }
        cat.reshape(&[n, d])
    }
}

pub(crate) fn logsumexp_values<T: Real>(x: &[T]) -> T {
    let m = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if m == T::neg_infinity() {
        return m;
    }
    let s: T = x.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}
