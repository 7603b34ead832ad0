//! Dense row-major kernels for the small matrices used here (at most a few
//! hundred rows). Every tensor op and every plain-data routine goes through
//! these functions, so tracked and untracked evaluations share arithmetic.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `a (m×k) · b (k×n)`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// `a (m×k) · x (k)`.
pub fn matvec<T: Real>(a: &[T], x: &[T], m: usize, k: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(x.len(), k);
    (0..m)
        .map(|i| {
            a[i * k..(i + 1) * k]
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&aij, &xj)| acc + aij * xj)
        })
        .collect()
}

/// `aᵀ (k×m) · y (m)` for `a` stored as m×k.
pub fn matvec_t<T: Real>(a: &[T], y: &[T], m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k];
    for i in 0..m {
        let yi = y[i];
        for (o, &aij) in out.iter_mut().zip(&a[i * k..(i + 1) * k]) {
            *o = *o + aij * yi;
        }
    }
    out
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn identity<T: Real>(n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        out[i * n + i] = T::one();
    }
    out
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Euclidean distance.
pub fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    sq_dist(a, b).sqrt()
}

/// Squared Euclidean distance.
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    /// Factors a square matrix. Fails when the pivot ratio exceeds the
    /// reciprocal machine epsilon.
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::Singular {
                    op: "lu",
                    cond: f64::INFINITY,
                });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        lu[i * n + j] = lu[i * n + j] - f * lu[k * n + j];
                    }
                }
            }
        }
        let this = Lu { n, lu, perm };
        let cond = this.pivot_condition();
        if cond.as_f64() * T::epsilon().as_f64() > 1.0 {
            return Err(Error::Singular {
                op: "lu",
                cond: cond.as_f64(),
            });
        }
        Ok(this)
    }

    /// Ratio of the largest to the smallest pivot magnitude; a cheap lower
    /// estimate of the 2-norm condition number.
    pub fn pivot_condition(&self) -> T {
        let n = self.n;
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for i in 0..n {
            let v = self.lu[i * n + i].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if n == 0 {
            T::one()
        } else {
            hi / lo
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s = s - self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, then Lᵀ w = y, then x = Pᵀ w.
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s = s - self.lu[j * n + i] * y[j];
            }
            y[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s = s - self.lu[j * n + i] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        let mut inv = vec![T::zero(); n * n];
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

pub fn inverse<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    Ok(Lu::factor(a, n)?.inverse())
}

pub fn solve<T: Real>(a: &[T], b: &[T], n: usize) -> Result<Vec<T>> {
    Ok(Lu::factor(a, n)?.solve(b))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of a row-major n×n matrix. Only the symmetric part of `a` is
/// used.
pub fn sym_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut m = vec![T::zero(); n * n];
    let half = T::c(0.5);
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = half * (a[i * n + j] + a[j * n + i]);
        }
    }
    let mut v = identity::<T>(n);
    let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = T::epsilon() * T::epsilon() * scale * scale;
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        if off <= tol || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![T::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + col] = v[k * n + src];
        }
    }
    (values, vectors)
}

pub fn sym_eigenvalues<T: Real>(a: &[T], n: usize) -> Vec<T> {
    sym_eigen(a, n).0
}

/// Condition number of a symmetric positive-definite matrix (`λmax/λmin`).
pub fn spd_condition<T: Real>(a: &[T], n: usize) -> T {
    let ev = sym_eigenvalues(a, n);
    let lo = ev.first().copied().unwrap_or_else(T::one);
    let hi = ev.last().copied().unwrap_or_else(T::one);
    if lo <= T::zero() {
        T::infinity()
    } else {
        hi / lo
    }
}

/// Singular values of an m×n matrix in ascending order, via the eigenvalues of
/// the smaller Gram matrix.
pub fn singular_values<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let (gram, k) = if m >= n {
        let at = transpose(a, m, n);
        (matmul(&at, a, n, m, n), n)
    } else {
        let at = transpose(a, m, n);
        (matmul(a, &at, m, n, m), m)
    };
    sym_eigenvalues(&gram, k)
        .into_iter()
        .map(|l| l.max(T::zero()).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn lu_inverse_round_trip() {
        let mut s = 7;
        for n in 1..9 {
            let a: Vec<f64> = (0..n * n).map(|_| lcg(&mut s)).collect();
            let inv = inverse(&a, n).unwrap();
            let prod = matmul(&a, &inv, n, n, n);
            let eye = identity::<f64>(n);
            for (p, e) in prod.iter().zip(&eye) {
                assert!((p - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transpose_solve_matches_explicit() {
        let mut s = 3;
        let n = 6;
        let a: Vec<f64> = (0..n * n).map(|_| lcg(&mut s)).collect();
        let b: Vec<f64> = (0..n).map(|_| lcg(&mut s)).collect();
        let lu = Lu::factor(&a, n).unwrap();
        let x = lu.solve_transpose(&b);
        let back = matvec_t(&a, &x, n, n);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        match inverse(&a, 2) {
            Err(Error::Singular { cond, .. }) => assert!(cond > 1e15),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let mut s = 11;
        let n = 7;
        let b: Vec<f64> = (0..n * n).map(|_| lcg(&mut s)).collect();
        let a = matmul(&transpose(&b, n, n), &b, n, n, n);
        let (vals, vecs) = sym_eigen(&a, n);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = vals[i];
        }
        let rec = matmul(
            &matmul(&vecs, &d, n, n, n),
            &transpose(&vecs, n, n),
            n,
            n,
            n,
        );
        for (r, x) in rec.iter().zip(&a) {
            assert!((r - x).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_values_of_diagonal() {
        let a: [f64; 6] = [3.0, 0.0, 0.0, 0.0, -2.0, 0.0];
        let sv = singular_values(&a, 2, 3);
        assert!((sv[0] - 2.0).abs() < 1e-12 && (sv[1] - 3.0).abs() < 1e-12);
    }
}
